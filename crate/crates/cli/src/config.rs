//! Run configuration: defaults, an optional flat `key=value` file, and
//! command-line overrides (flags win over the file).

use std::path::Path;

use clap::Args;
use l3sma::geometry::{interpolators, OrientationCode, Spacing};
use l3sma::preprocess::{AugmentConfig, HuWindow};
use l3sma::segment::{segmenters, SegParams};
use l3sma::sma::{slice_policies, Cutoffs};
use serde::Serialize;

use crate::error::CliError;
use crate::report::report_writers;

/// Everything that influences a run's numbers. Embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub target_orientation: OrientationCode,
    pub target_spacing: Spacing,
    pub hu_window: HuWindow,
    pub cutoffs: Cutoffs,
    pub slice_policy: String,
    pub seg_params: SegParams,
    pub segmenter: String,
    pub interpolation: String,
    pub output_format: String,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Divisor used for standard deviations in summaries.
    pub std_divisor: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            target_orientation: OrientationCode::RAS,
            target_spacing: Spacing::default(),
            hu_window: HuWindow::default(),
            cutoffs: Cutoffs::default(),
            slice_policy: "single".into(),
            seg_params: SegParams::default(),
            segmenter: "baseline".into(),
            interpolation: "trilinear".into(),
            output_format: "csv".into(),
            augment: AugmentConfig::default(),
            seed: 0,
            std_divisor: "N".into(),
        }
    }
}

/// Flags shared by every subcommand. Each mirrors a config-file key.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat key=value file; flags given on the command line take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<std::path::PathBuf>,
    /// Target orientation code, e.g. RAS or LPS
    #[arg(long, global = true)]
    pub orientation: Option<String>,
    /// Target spacing in mm: one value or three comma-separated values
    #[arg(long, global = true)]
    pub spacing: Option<String>,
    #[arg(long = "hu-lo", global = true, allow_hyphen_values = true)]
    pub hu_lo: Option<String>,
    #[arg(long = "hu-hi", global = true, allow_hyphen_values = true)]
    pub hu_hi: Option<String>,
    #[arg(long = "cutoff-male", global = true)]
    pub cutoff_male: Option<String>,
    #[arg(long = "cutoff-female", global = true)]
    pub cutoff_female: Option<String>,
    /// single, sum, largest or index=<k>
    #[arg(long = "slice-policy", global = true)]
    pub slice_policy: Option<String>,
    /// Report format: csv or json
    #[arg(long, global = true)]
    pub format: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Segmenter: baseline or window
    #[arg(long, global = true)]
    pub segmenter: Option<String>,
    /// Image interpolation: trilinear or nearest
    #[arg(long, global = true)]
    pub interpolation: Option<String>,
    #[arg(long = "muscle-lo", global = true, allow_hyphen_values = true)]
    pub muscle_lo: Option<String>,
    #[arg(long = "muscle-hi", global = true, allow_hyphen_values = true)]
    pub muscle_hi: Option<String>,
    #[arg(long = "body-threshold", global = true, allow_hyphen_values = true)]
    pub body_threshold: Option<String>,
    #[arg(long = "opening-radius", global = true)]
    pub opening_radius: Option<String>,
    #[arg(long = "min-component", global = true)]
    pub min_component: Option<String>,
    #[arg(long = "max-rotation", global = true)]
    pub max_rotation: Option<String>,
    /// In-plane augmentation crop, e.g. 192 or 192,160
    #[arg(long, global = true)]
    pub crop: Option<String>,
    #[arg(long = "flip-probability", global = true)]
    pub flip_probability: Option<String>,
    #[arg(long = "fill-hu", global = true, allow_hyphen_values = true)]
    pub fill_hu: Option<String>,
}

impl ConfigArgs {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("orientation", &self.orientation),
            ("spacing", &self.spacing),
            ("hu-lo", &self.hu_lo),
            ("hu-hi", &self.hu_hi),
            ("cutoff-male", &self.cutoff_male),
            ("cutoff-female", &self.cutoff_female),
            ("slice-policy", &self.slice_policy),
            ("format", &self.format),
            ("seed", &self.seed),
            ("segmenter", &self.segmenter),
            ("interpolation", &self.interpolation),
            ("muscle-lo", &self.muscle_lo),
            ("muscle-hi", &self.muscle_hi),
            ("body-threshold", &self.body_threshold),
            ("opening-radius", &self.opening_radius),
            ("min-component", &self.min_component),
            ("max-rotation", &self.max_rotation),
            ("crop", &self.crop),
            ("flip-probability", &self.flip_probability),
            ("fill-hu", &self.fill_hu),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}={value}: {why}"))
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| bad(key, value, e))
}

fn list<T: std::str::FromStr + Copy, const N: usize>(
    key: &str,
    value: &str,
) -> Result<[T; N], CliError>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<T> = value
        .split(',')
        .map(|p| number::<T>(key, p))
        .collect::<Result<_, _>>()?;
    match parts.len() {
        1 => Ok([parts[0]; N]),
        n if n == N => Ok(std::array::from_fn(|i| parts[i])),
        n => Err(bad(
            key,
            value,
            format!("expected 1 or {N} values, got {n}"),
        )),
    }
}

/// Parses the flat `key=value` config format. Blank lines and lines
/// starting with `#` are ignored; keys accept `-` or `_`.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("line {}: expected key=value, got '{line}'", n + 1))
        })?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "orientation" => {
                self.target_orientation = value.parse().map_err(|e| bad(key, value, e))?;
            }
            "spacing" => {
                self.target_spacing =
                    Spacing::new(list::<f64, 3>(key, value)?).map_err(|e| bad(key, value, e))?;
            }
            "hu-lo" => {
                self.hu_window = HuWindow::new(number(key, value)?, self.hu_window.hi())
                    .map_err(|e| bad(key, value, e))?
            }
            "hu-hi" => {
                self.hu_window = HuWindow::new(self.hu_window.lo(), number(key, value)?)
                    .map_err(|e| bad(key, value, e))?
            }
            "cutoff-male" => {
                self.cutoffs = Cutoffs::new(number(key, value)?, self.cutoffs.female_cm2)
                    .map_err(|e| bad(key, value, e))?;
            }
            "cutoff-female" => {
                self.cutoffs = Cutoffs::new(self.cutoffs.male_cm2, number(key, value)?)
                    .map_err(|e| bad(key, value, e))?;
            }
            "slice-policy" => {
                slice_policies()
                    .build(value, &())
                    .map_err(|e| bad(key, value, e))?;
                self.slice_policy = value.to_string();
            }
            "format" => {
                report_writers()
                    .build(value, &())
                    .map_err(|e| bad(key, value, e))?;
                self.output_format = value.to_string();
            }
            "seed" => self.seed = number(key, value)?,
            "segmenter" => {
                segmenters()
                    .build(value, &self.seg_params)
                    .map_err(|e| bad(key, value, e))?;
                self.segmenter = value.to_string();
            }
            "interpolation" => {
                interpolators()
                    .build(value, &())
                    .map_err(|e| bad(key, value, e))?;
                self.interpolation = value.to_string();
            }
            "muscle-lo" => {
                let w = &mut self.seg_params.muscle_window;
                *w = HuWindow::new(number(key, value)?, w.hi()).map_err(|e| bad(key, value, e))?;
            }
            "muscle-hi" => {
                let w = &mut self.seg_params.muscle_window;
                *w = HuWindow::new(w.lo(), number(key, value)?).map_err(|e| bad(key, value, e))?;
            }
            "body-threshold" => self.seg_params.body_threshold_hu = number(key, value)?,
            "opening-radius" => self.seg_params.opening_radius_px = number(key, value)?,
            "min-component" => self.seg_params.min_component_mm2 = number(key, value)?,
            "max-rotation" => self.augment.max_rotation_deg = number(key, value)?,
            "crop" => self.augment.crop = list::<usize, 2>(key, value)?,
            "flip-probability" => self.augment.flip_probability = number(key, value)?,
            "fill-hu" => self.augment.fill_hu = number(key, value)?,
            _ => return Err(CliError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(args: &ConfigArgs) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            for (k, v) in parse_config_text(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in args.pairs() {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.seg_params
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.augment
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Flat `key=value` view, in a fixed order, using the config-file keys.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let s = self.target_spacing.get();
        let seg = &self.seg_params;
        let aug = &self.augment;
        vec![
            ("orientation", self.target_orientation.to_string()),
            ("spacing", format!("{},{},{}", s[0], s[1], s[2])),
            ("hu-lo", self.hu_window.lo().to_string()),
            ("hu-hi", self.hu_window.hi().to_string()),
            ("cutoff-male", self.cutoffs.male_cm2.to_string()),
            ("cutoff-female", self.cutoffs.female_cm2.to_string()),
            ("slice-policy", self.slice_policy.clone()),
            ("format", self.output_format.clone()),
            ("seed", self.seed.to_string()),
            ("segmenter", self.segmenter.clone()),
            ("interpolation", self.interpolation.clone()),
            ("muscle-lo", seg.muscle_window.lo().to_string()),
            ("muscle-hi", seg.muscle_window.hi().to_string()),
            ("body-threshold", seg.body_threshold_hu.to_string()),
            ("opening-radius", seg.opening_radius_px.to_string()),
            ("min-component", seg.min_component_mm2.to_string()),
            ("max-rotation", aug.max_rotation_deg.to_string()),
            ("crop", format!("{},{}", aug.crop[0], aug.crop[1])),
            ("flip-probability", aug.flip_probability.to_string()),
            ("fill-hu", aug.fill_hu.to_string()),
            ("std-divisor", self.std_divisor.clone()),
        ]
    }

    pub fn to_file_text(&self) -> String {
        self.pairs()
            .into_iter()
            .filter(|(k, _)| *k != "std-divisor")
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// Reads and resolves a config file on its own, without flag overrides.
pub fn load_file(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::resolve(&ConfigArgs {
        config: Some(path.to_path_buf()),
        ..ConfigArgs::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let dir = std::env::temp_dir().join(format!("l3sma-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(
            &path,
            "# comment\norientation=LPS\nspacing = 0.8\ncutoff_male=150\n",
        )
        .unwrap();
        let args = ConfigArgs {
            config: Some(path.clone()),
            orientation: Some("RAS".into()),
            ..ConfigArgs::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.target_orientation, OrientationCode::RAS);
        assert_eq!(cfg.target_spacing.get(), [0.8; 3]);
        assert_eq!(cfg.cutoffs.male_cm2, 150.0);
        assert_eq!(
            load_file(&path).unwrap().target_orientation.to_string(),
            "LPS"
        );
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("slice-policy", "index=3").unwrap();
        cfg.set("spacing", "0.5,0.5,2").unwrap();
        let mut back = RunConfig::default();
        for (k, v) in parse_config_text(&cfg.to_file_text()).unwrap() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("orientation", "RAR").is_err());
        assert!(cfg.set("hu-lo", "300").is_err());
        assert!(cfg.set("slice-policy", "median").is_err());
        assert!(cfg.set("spacing", "1,2").is_err());
        assert!(cfg.set("colour", "red").is_err());
        assert!(parse_config_text("no equals sign").is_err());
    }
}
