//! Workspace description and scenario configuration.
//!
//! Two adjacent rectangular regions share the corridor length `L` along the
//! y-axis. Region 1 spans `[0, B1)` and region 2 spans `[B1, B1 + B2]` along
//! the x-axis. A pair of links parallel to the y-axis sits inside region 1.
//!
//! Scenario files are plain `key = value` text. Values keep the units of the
//! file (degrees, persons per minute); accessors convert to SI units.

use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

/// Default heading-persistence probability. With a 50 ms step this holds a
/// heading for about one second on average.
pub const DEFAULT_HEADING_PERSISTENCE: f64 = 0.95;
pub const DEFAULT_THETA_MAX_DEG: f64 = 45.0;
pub const DEFAULT_TIME_STEP: f64 = 0.05;
pub const DEFAULT_ENTRANCE1_FRACTION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key `{key}` on line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown preset `{0}` (expected one of outdoor, indoor, museum, costco-aisle)")]
    UnknownPreset(String),
}

impl ConfigError {
    /// Name of the offending field for validation errors.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            ConfigError::MissingKey(key) => Some(key),
            _ => None,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Geometry of the two-region workspace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaGeometry {
    /// Width of region 1 along x (m).
    pub region1_width: f64,
    /// Width of region 2 along x (m).
    pub region2_width: f64,
    /// Corridor length along y (m).
    pub corridor_length: f64,
    /// x-coordinates of the two links (m), both inside region 1.
    pub link_positions: [f64; 2],
}

impl AreaGeometry {
    pub fn new(
        region1_width: f64,
        region2_width: f64,
        corridor_length: f64,
        link_positions: [f64; 2],
    ) -> Result<Self, ConfigError> {
        let geom = Self {
            region1_width,
            region2_width,
            corridor_length,
            link_positions,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Outdoor campus site.
    pub fn outdoor() -> Self {
        Self {
            region1_width: 5.5,
            region2_width: 8.8,
            corridor_length: 4.26,
            link_positions: [2.5, 3.7],
        }
    }

    /// Indoor hallway site (also hosts the museum layout).
    pub fn indoor() -> Self {
        Self {
            region1_width: 7.0,
            region2_width: 13.0,
            corridor_length: 2.25,
            link_positions: [2.5, 4.0],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.region1_width.is_finite() && self.region1_width > 0.0) {
            return Err(invalid("b1_m", format!("must be > 0, got {}", self.region1_width)));
        }
        if !(self.region2_width.is_finite() && self.region2_width > 0.0) {
            return Err(invalid("b2_m", format!("must be > 0, got {}", self.region2_width)));
        }
        if !(self.corridor_length.is_finite() && self.corridor_length > 0.0) {
            return Err(invalid(
                "length_m",
                format!("must be > 0, got {}", self.corridor_length),
            ));
        }
        let [x1, x2] = self.link_positions;
        if !(x1.is_finite() && x2.is_finite() && 0.0 < x1 && x1 < x2 && x2 < self.region1_width) {
            return Err(invalid(
                "link_x_m",
                format!(
                    "need 0 < X1 < X2 < B1 = {}, got ({x1}, {x2})",
                    self.region1_width
                ),
            ));
        }
        Ok(())
    }

    /// Total width `B = B1 + B2`.
    pub fn total_width(&self) -> f64 {
        self.region1_width + self.region2_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Fixed population reflecting off all four walls.
    Closed,
    /// Poisson arrivals walking forward from either entrance until they exit.
    Open,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Closed => "closed",
            Scenario::Open => "open",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "closed" => Ok(Scenario::Closed),
            "open" => Ok(Scenario::Open),
            other => Err(format!("expected `closed` or `open`, got `{other}`")),
        }
    }
}

/// Which heading intervals a redraw may pick from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionMode {
    /// Both `[-θmax, θmax]` and `[π-θmax, π+θmax]`.
    Bidirectional,
    /// Only the interval matching the pedestrian's flow direction.
    ForwardOnly,
}

/// Pedestrian motion parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionParams {
    /// Probability of keeping the current heading for another step.
    pub heading_persistence: f64,
    /// Half-width of the allowed heading interval(s), in degrees.
    pub theta_max_deg: f64,
    /// Time step (s).
    pub time_step: f64,
    pub speed_region1: f64,
    pub speed_region2: f64,
    pub scenario: Scenario,
    /// Arrival rate in persons per minute (open scenario only).
    pub arrival_rate_per_min: Option<f64>,
    /// Fraction of arrivals entering at x = 0; the rest enter at x = B.
    pub entrance1_fraction: f64,
}

impl MotionParams {
    pub fn theta_max(&self) -> f64 {
        self.theta_max_deg.to_radians()
    }

    /// Arrival rate in persons per second.
    pub fn arrival_rate(&self) -> Option<f64> {
        self.arrival_rate_per_min.map(|l| l / 60.0)
    }

    pub fn direction_mode(&self) -> DirectionMode {
        match self.scenario {
            Scenario::Closed => DirectionMode::Bidirectional,
            Scenario::Open => DirectionMode::ForwardOnly,
        }
    }

    /// Speed of the region containing `x`.
    pub fn speed_at(&self, x: f64, geom: &AreaGeometry) -> f64 {
        if x < geom.region1_width {
            self.speed_region1
        } else {
            self.speed_region2
        }
    }

    pub fn with_speeds(mut self, v1: f64, v2: f64) -> Self {
        self.speed_region1 = v1;
        self.speed_region2 = v2;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = self.heading_persistence;
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid("p", format!("must lie in [0, 1], got {p}")));
        }
        let t = self.theta_max_deg;
        if !(t > 0.0 && t <= 90.0) {
            return Err(invalid("theta_max_deg", format!("must lie in (0, 90], got {t}")));
        }
        if !(self.time_step.is_finite() && self.time_step > 0.0) {
            return Err(invalid("dt_s", format!("must be > 0, got {}", self.time_step)));
        }
        if !(self.speed_region1.is_finite() && self.speed_region1 > 0.0) {
            return Err(invalid("v1_mps", format!("must be > 0, got {}", self.speed_region1)));
        }
        if !(self.speed_region2.is_finite() && self.speed_region2 > 0.0) {
            return Err(invalid("v2_mps", format!("must be > 0, got {}", self.speed_region2)));
        }
        match (self.scenario, self.arrival_rate_per_min) {
            (Scenario::Open, None) => return Err(ConfigError::MissingKey("lambda_per_min")),
            (Scenario::Open, Some(l)) if !(l.is_finite() && l > 0.0) => {
                return Err(invalid("lambda_per_min", format!("must be > 0, got {l}")));
            }
            (Scenario::Closed, Some(l)) if !(l.is_finite() && l >= 0.0) => {
                return Err(invalid("lambda_per_min", format!("must be >= 0, got {l}")));
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.entrance1_fraction) {
            return Err(invalid(
                "entrance1_fraction",
                format!("must lie in [0, 1], got {}", self.entrance1_fraction),
            ));
        }
        Ok(())
    }
}

/// How many people share the area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Population {
    /// Known constant head count (closed scenario).
    Fixed(u32),
    /// Known time-average head count (open scenario).
    Average(f64),
    /// Not known; only valid for the open scenario.
    Unknown,
}

impl Population {
    /// Head count as a float, if known.
    pub fn count(&self) -> Option<f64> {
        match *self {
            Population::Fixed(n) => Some(n as f64),
            Population::Average(n) => Some(n),
            Population::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub geometry: AreaGeometry,
    pub motion: MotionParams,
    pub population: Population,
    /// Observation length in seconds.
    pub duration: f64,
    pub rng_seed: u64,
}

const KEYS: &[&str] = &[
    "b1_m",
    "b2_m",
    "length_m",
    "link_x_m",
    "p",
    "theta_max_deg",
    "dt_s",
    "v1_mps",
    "v2_mps",
    "scenario",
    "lambda_per_min",
    "n_people",
    "duration_s",
    "seed",
    "entrance1_fraction",
];

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.geometry.validate()?;
        self.motion.validate()?;
        let [x1, x2] = self.geometry.link_positions;
        let reach = self.motion.speed_region1.max(self.motion.speed_region2) * self.motion.time_step;
        if reach >= self.geometry.region1_width || reach >= self.geometry.region2_width {
            return Err(invalid(
                "dt_s",
                format!("per-step displacement {reach} m does not fit inside a region"),
            ));
        }
        debug_assert!(x1 < x2);
        match (self.motion.scenario, self.population) {
            (Scenario::Closed, Population::Fixed(n)) if n >= 1 => {}
            (Scenario::Closed, Population::Unknown) => {
                return Err(ConfigError::MissingKey("n_people"));
            }
            (Scenario::Closed, _) => {
                return Err(invalid("n_people", "closed scenario needs an integer count >= 1"));
            }
            (Scenario::Open, Population::Average(n)) if !(n.is_finite() && n > 0.0) => {
                return Err(invalid("n_people", format!("average count must be > 0, got {n}")));
            }
            (Scenario::Open, Population::Fixed(_)) => {
                return Err(invalid("n_people", "open scenario takes an average count"));
            }
            (Scenario::Open, _) => {}
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(invalid("duration_s", format!("must be > 0, got {}", self.duration)));
        }
        Ok(())
    }

    /// Number of simulation steps covering `duration`.
    pub fn n_steps(&self) -> usize {
        (self.duration / self.motion.time_step).round() as usize
    }

    /// Parse and validate a scenario file's contents.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values: [Option<(usize, String)>; 15] = Default::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: line_no,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim();
            let Some(slot) = KEYS.iter().position(|k| *k == key) else {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line: line_no,
                });
            };
            if values[slot].is_some() {
                return Err(ConfigError::Parse {
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
            values[slot] = Some((line_no, value.trim().to_string()));
        }

        let get = |key: &'static str| -> Option<&(usize, String)> {
            let slot = KEYS.iter().position(|k| *k == key).expect("known key");
            values[slot].as_ref()
        };
        let num = |key: &'static str| -> Result<Option<f64>, ConfigError> {
            get(key)
                .map(|(line, v)| {
                    v.parse::<f64>().map_err(|_| ConfigError::Parse {
                        line: *line,
                        message: format!("`{key}` is not a number: `{v}`"),
                    })
                })
                .transpose()
        };
        let required = |key: &'static str| -> Result<f64, ConfigError> {
            num(key)?.ok_or(ConfigError::MissingKey(key))
        };

        let link_positions = {
            let (line, v) = get("link_x_m").ok_or(ConfigError::MissingKey("link_x_m"))?;
            let parts: Vec<&str> = v.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(invalid(
                    "link_x_m",
                    format!("expected exactly two comma-separated positions, got {}", parts.len()),
                ));
            }
            let mut xs = [0.0; 2];
            for (dst, part) in xs.iter_mut().zip(&parts) {
                *dst = part.parse::<f64>().map_err(|_| ConfigError::Parse {
                    line: *line,
                    message: format!("`link_x_m` entry is not a number: `{part}`"),
                })?;
            }
            xs
        };
        let geometry = AreaGeometry {
            region1_width: required("b1_m")?,
            region2_width: required("b2_m")?,
            corridor_length: required("length_m")?,
            link_positions,
        };

        let scenario = {
            let (line, v) = get("scenario").ok_or(ConfigError::MissingKey("scenario"))?;
            v.parse::<Scenario>()
                .map_err(|message| ConfigError::Parse { line: *line, message })?
        };
        let motion = MotionParams {
            heading_persistence: num("p")?.unwrap_or(DEFAULT_HEADING_PERSISTENCE),
            theta_max_deg: num("theta_max_deg")?.unwrap_or(DEFAULT_THETA_MAX_DEG),
            time_step: num("dt_s")?.unwrap_or(DEFAULT_TIME_STEP),
            speed_region1: required("v1_mps")?,
            speed_region2: required("v2_mps")?,
            scenario,
            arrival_rate_per_min: num("lambda_per_min")?,
            entrance1_fraction: num("entrance1_fraction")?.unwrap_or(DEFAULT_ENTRANCE1_FRACTION),
        };

        let population = match (scenario, get("n_people")) {
            (_, None) => Population::Unknown,
            (Scenario::Closed, Some((line, v))) => {
                let n = v.parse::<u32>().map_err(|_| ConfigError::Parse {
                    line: *line,
                    message: format!("`n_people` must be a non-negative integer, got `{v}`"),
                })?;
                Population::Fixed(n)
            }
            (Scenario::Open, Some(_)) => Population::Average(required("n_people")?),
        };

        let seed = match get("seed") {
            None => 0,
            Some((line, v)) => v.parse::<u64>().map_err(|_| ConfigError::Parse {
                line: *line,
                message: format!("`seed` must be an unsigned integer, got `{v}`"),
            })?,
        };

        let config = ScenarioConfig {
            geometry,
            motion,
            population,
            duration: required("duration_s")?,
            rng_seed: seed,
        };
        config.validate()?;
        Ok(config)
    }

    /// Serialize to the key/value file format; parses back to an identical
    /// config.
    pub fn to_config_string(&self) -> String {
        let m = &self.motion;
        let g = &self.geometry;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("scenario", m.scenario.as_str().to_string());
        kv("b1_m", g.region1_width.to_string());
        kv("b2_m", g.region2_width.to_string());
        kv("length_m", g.corridor_length.to_string());
        kv(
            "link_x_m",
            format!("{}, {}", g.link_positions[0], g.link_positions[1]),
        );
        kv("p", m.heading_persistence.to_string());
        kv("theta_max_deg", m.theta_max_deg.to_string());
        kv("dt_s", m.time_step.to_string());
        kv("v1_mps", m.speed_region1.to_string());
        kv("v2_mps", m.speed_region2.to_string());
        if let Some(l) = m.arrival_rate_per_min {
            kv("lambda_per_min", l.to_string());
        }
        if m.scenario == Scenario::Open {
            kv("entrance1_fraction", m.entrance1_fraction.to_string());
        }
        match self.population {
            Population::Fixed(n) => kv("n_people", n.to_string()),
            Population::Average(n) => kv("n_people", n.to_string()),
            Population::Unknown => {}
        }
        kv("duration_s", self.duration.to_string());
        kv("seed", self.rng_seed.to_string());
        out
    }

    /// The config as `# `-prefixed comment lines, for artifact headers.
    pub fn as_comment_block(&self) -> String {
        self.to_config_string()
            .lines()
            .map(|l| format!("# {l}\n"))
            .collect()
    }

    /// Look up a bundled preset by name.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let closed = |geometry: AreaGeometry, v1: f64, v2: f64, n: u32, duration: f64| {
            ScenarioConfig {
                geometry,
                motion: MotionParams {
                    heading_persistence: DEFAULT_HEADING_PERSISTENCE,
                    theta_max_deg: DEFAULT_THETA_MAX_DEG,
                    time_step: DEFAULT_TIME_STEP,
                    speed_region1: v1,
                    speed_region2: v2,
                    scenario: Scenario::Closed,
                    arrival_rate_per_min: None,
                    entrance1_fraction: DEFAULT_ENTRANCE1_FRACTION,
                },
                population: Population::Fixed(n),
                duration,
                rng_seed: 1,
            }
        };
        let config = match name {
            "outdoor" => closed(AreaGeometry::outdoor(), 0.8, 0.3, 5, 600.0),
            "indoor" => closed(AreaGeometry::indoor(), 0.8, 0.3, 9, 600.0),
            // Visitors linger at the engaging exhibit in region 2.
            "museum" => closed(AreaGeometry::indoor(), 1.1, 0.12, 10, 300.0),
            // The whole aisle is one region, so both halves share a speed.
            "costco-aisle" => ScenarioConfig {
                geometry: AreaGeometry {
                    region1_width: 7.5,
                    region2_width: 7.5,
                    corridor_length: 2.0,
                    link_positions: [2.5, 4.0],
                },
                motion: MotionParams {
                    heading_persistence: DEFAULT_HEADING_PERSISTENCE,
                    theta_max_deg: 20.0,
                    time_step: DEFAULT_TIME_STEP,
                    speed_region1: 0.48,
                    speed_region2: 0.48,
                    scenario: Scenario::Open,
                    arrival_rate_per_min: Some(1.0),
                    entrance1_fraction: DEFAULT_ENTRANCE1_FRACTION,
                },
                population: Population::Unknown,
                duration: 900.0,
                rng_seed: 1,
            },
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        debug_assert!(config.validate().is_ok());
        Ok(config)
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["outdoor", "indoor", "museum", "costco-aisle"]
    }

    pub fn with_speeds(mut self, v1: f64, v2: f64) -> Self {
        self.motion = self.motion.with_speeds(v1, v2);
        self
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_config_string())
    }
}

/// Read, parse and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioConfig::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const OUTDOOR: &str = "\
# outdoor campus site
scenario = closed
b1_m = 5.5
b2_m = 8.8
length_m = 4.26
link_x_m = 2.5, 3.7
v1_mps = 0.8
v2_mps = 0.3
n_people = 5
duration_s = 600
seed = 7
";

    #[test]
    fn parses_outdoor_site() {
        let c = ScenarioConfig::parse(OUTDOOR).unwrap();
        assert_eq!(c.geometry, AreaGeometry::outdoor());
        assert_eq!(c.population, Population::Fixed(5));
        assert_eq!(c.motion.heading_persistence, DEFAULT_HEADING_PERSISTENCE);
        assert_eq!(c.motion.theta_max_deg, 45.0);
        assert_eq!(c.rng_seed, 7);
        assert_eq!(c.n_steps(), 12_000);
    }

    #[test]
    fn parses_indoor_site() {
        let text = "scenario = closed\nb1_m = 7\nb2_m = 13\nlength_m = 2.25\nlink_x_m = 2.5,4\n\
                    v1_mps = 1.1\nv2_mps = 0.12\nn_people = 9\nduration_s = 300\n";
        let c = ScenarioConfig::parse(text).unwrap();
        assert_eq!(c.geometry, AreaGeometry::indoor());
    }

    #[test]
    fn link_outside_region1_names_field() {
        let text = OUTDOOR.replace("2.5, 3.7", "2.5, 6.0");
        let err = ScenarioConfig::parse(&text).unwrap_err();
        assert_eq!(err.field(), Some("link_x_m"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{OUTDOOR}colour = blue\n");
        assert!(matches!(
            ScenarioConfig::parse(&text),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn malformed_line_is_parse_error() {
        let text = format!("{OUTDOOR}just some words\n");
        assert!(matches!(
            ScenarioConfig::parse(&text),
            Err(ConfigError::Parse { line: 12, .. })
        ));
    }

    #[test]
    fn single_link_position_rejected() {
        let text = OUTDOOR.replace("2.5, 3.7", "2.5");
        assert_eq!(ScenarioConfig::parse(&text).unwrap_err().field(), Some("link_x_m"));
    }

    #[test]
    fn open_requires_rate() {
        let text = OUTDOOR.replace("closed", "open").replace("n_people = 5\n", "");
        let err = ScenarioConfig::parse(&text).unwrap_err();
        assert_eq!(err.field(), Some("lambda_per_min"));
    }

    #[test]
    fn presets_are_valid_and_round_trip() {
        for name in ScenarioConfig::preset_names() {
            let c = ScenarioConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(ScenarioConfig::parse(&c.to_config_string()).unwrap(), c);
        }
        assert!(ScenarioConfig::preset("mall").is_err());
    }

    #[test]
    fn each_out_of_bounds_field_is_named() {
        let base = ScenarioConfig::preset("outdoor").unwrap();
        let cases: Vec<(&str, Box<dyn Fn(&mut ScenarioConfig)>)> = vec![
            ("b1_m", Box::new(|c| c.geometry.region1_width = -1.0)),
            ("b2_m", Box::new(|c| c.geometry.region2_width = 0.0)),
            ("length_m", Box::new(|c| c.geometry.corridor_length = -3.0)),
            ("link_x_m", Box::new(|c| c.geometry.link_positions = [3.0, 2.0])),
            ("link_x_m", Box::new(|c| c.geometry.link_positions = [0.0, 2.0])),
            ("p", Box::new(|c| c.motion.heading_persistence = 1.5)),
            ("theta_max_deg", Box::new(|c| c.motion.theta_max_deg = 120.0)),
            ("theta_max_deg", Box::new(|c| c.motion.theta_max_deg = 0.0)),
            ("dt_s", Box::new(|c| c.motion.time_step = 0.0)),
            ("v1_mps", Box::new(|c| c.motion.speed_region1 = -0.1)),
            ("v2_mps", Box::new(|c| c.motion.speed_region2 = 0.0)),
            ("n_people", Box::new(|c| c.population = Population::Fixed(0))),
            ("duration_s", Box::new(|c| c.duration = 0.0)),
        ];
        for (field, mutate) in cases {
            let mut c = base;
            mutate(&mut c);
            let err = c.validate().unwrap_err();
            assert_eq!(err.field(), Some(field), "{err}");
            // The same failure surfaces through the text format.
            let err = ScenarioConfig::parse(&c.to_config_string()).unwrap_err();
            assert_eq!(err.field(), Some(field), "{err}");
        }
    }
}
