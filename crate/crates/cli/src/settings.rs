//! Experiment settings: TOML config file overlaid with command-line flags.

use std::fs;
use std::path::Path;

use clap::Args;
use grasp_dlsr::dataset::SplitMode;
use grasp_dlsr::dictlearn::{
    DictLearnConfig, DictMethod, DEFAULT_ATOMS, DEFAULT_EPOCHS, DEFAULT_MINIBATCH,
};
use grasp_dlsr::evaluation::{
    EncoderChoice, ExperimentConfig, FrontEndConfig, GridSearchSpec, DEFAULT_FOLDS,
};
use grasp_dlsr::imageproc::RansacParams;
use grasp_dlsr::model::{LbfgsParams, C_GRID};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub dict: DictMethod,
    pub atoms: usize,
    pub epochs: usize,
    pub minibatch: usize,
    /// Dictionary-learning sparsity when not cross-validated.
    pub lambda: f64,
    pub gamma: usize,
    pub encoder: EncoderChoice,
    pub sparsity_grid: Option<Vec<f64>>,
    pub c_grid: Vec<f64>,
    pub outer_folds: usize,
    pub inner_folds: usize,
    /// Fixed hyperparameters for `train` and `detect-cv`.
    pub sparsity: Option<f64>,
    pub c: Option<f64>,
    pub front_end: FrontEndConfig,
    pub lbfgs: LbfgsParams,
    pub grid: GridSearchSpec,
    pub ransac: RansacParams,
    pub detection_folds: usize,
    pub split: SplitMode,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            dict: DictMethod::Nkm,
            atoms: DEFAULT_ATOMS,
            epochs: DEFAULT_EPOCHS,
            minibatch: DEFAULT_MINIBATCH,
            lambda: 1.0,
            gamma: 5,
            encoder: EncoderChoice::Natural,
            sparsity_grid: None,
            c_grid: C_GRID.to_vec(),
            outer_folds: DEFAULT_FOLDS,
            inner_folds: DEFAULT_FOLDS,
            sparsity: None,
            c: None,
            front_end: FrontEndConfig::default(),
            lbfgs: LbfgsParams::default(),
            grid: GridSearchSpec::default(),
            ransac: RansacParams::default(),
            detection_folds: DEFAULT_FOLDS,
            split: SplitMode::ImageWise,
        }
    }
}

/// Flags that override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Master random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dictionary atoms
    #[arg(long)]
    pub atoms: Option<usize>,
    /// Training epochs (ODL passes, or k-means/GSVQ iteration cap)
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Patches sampled for whitening and dictionary learning
    #[arg(long)]
    pub patches: Option<usize>,
    /// Skip ZCA whitening
    #[arg(long)]
    pub no_whitening: bool,
    /// Whitening regularizer
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Outer cross-validation folds
    #[arg(long)]
    pub outer_folds: Option<usize>,
    /// Inner cross-validation folds
    #[arg(long)]
    pub inner_folds: Option<usize>,
    /// SVM C grid, comma separated
    #[arg(long, value_delimiter = ',')]
    pub c_grid: Option<Vec<f64>>,
    /// Encoder sparsity grid, comma separated
    #[arg(long, value_delimiter = ',')]
    pub sparsity_grid: Option<Vec<f64>>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.atoms {
            self.atoms = v;
        }
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if let Some(v) = o.patches {
            self.front_end.patches = v;
        }
        if o.no_whitening {
            self.front_end.whitening = false;
        }
        if let Some(v) = o.epsilon {
            self.front_end.epsilon = v;
        }
        if let Some(v) = o.outer_folds {
            self.outer_folds = v;
        }
        if let Some(v) = o.inner_folds {
            self.inner_folds = v;
        }
        if let Some(v) = &o.c_grid {
            self.c_grid = v.clone();
        }
        if let Some(v) = &o.sparsity_grid {
            self.sparsity_grid = Some(v.clone());
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let usage = |m: &str| Err(Failure::Usage(m.to_string()));
        if self.outer_folds < 2 || self.inner_folds < 2 || self.detection_folds < 2 {
            return usage("fold counts must be at least 2");
        }
        if self.front_end.patches == 0 {
            return usage("patch count must be positive");
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return usage("C grid must hold positive values");
        }
        if self.grid.stride == 0
            || self.grid.widths.is_empty()
            || self.grid.heights.is_empty()
            || self.grid.angles.is_empty()
        {
            return usage("detection grid needs a positive stride and nonempty size/angle lists");
        }
        self.dict_config(self.dict)
            .validate()
            .map_err(|e| Failure::Usage(e.to_string()))
    }

    pub fn dict_config(&self, method: DictMethod) -> DictLearnConfig {
        DictLearnConfig {
            method,
            atoms: self.atoms,
            lambda: self.lambda,
            gamma: self.gamma,
            epochs: self.epochs,
            minibatch: self.minibatch,
            seed: self.seed,
        }
    }

    pub fn experiment(&self, method: DictMethod, encoder: EncoderChoice) -> ExperimentConfig {
        ExperimentConfig {
            dict: self.dict_config(method),
            encoder,
            sparsity_grid: self.sparsity_grid.clone(),
            c_grid: self.c_grid.clone(),
            outer_folds: self.outer_folds,
            inner_folds: self.inner_folds,
            seed: self.seed,
            front_end: self.front_end,
            lbfgs: self.lbfgs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let s: Settings = toml::from_str(
            "seed = 4\natoms = 50\n[front_end]\npatches = 1000\n[grid]\nstride = 6\n",
        )
        .unwrap();
        assert_eq!(
            (s.seed, s.atoms, s.front_end.patches, s.grid.stride),
            (4, 50, 1000, 6)
        );
        assert!(s.front_end.whitening);
        assert_eq!(s.grid.angles.len(), 12);
        assert_eq!(s.encoder, EncoderChoice::Natural);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(toml::from_str::<Settings>("atomz = 3").is_err());
    }

    #[test]
    fn settings_round_trip() {
        let s = Settings::default();
        let text = toml::to_string(&s).unwrap();
        assert_eq!(toml::from_str::<Settings>(&text).unwrap(), s);
    }

    #[test]
    fn flags_override() {
        let mut s = Settings::default();
        s.apply(&Overrides {
            seed: Some(9),
            no_whitening: true,
            c_grid: Some(vec![2.0]),
            ..Default::default()
        });
        assert_eq!(s.seed, 9);
        assert!(!s.front_end.whitening);
        assert_eq!(s.c_grid, [2.0]);
    }
}
