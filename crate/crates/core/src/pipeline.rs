//! The four navigation pipelines and their shared initialisation.
//!
//! Every pipeline starts at the first LOS 5G fix with zero velocity and the
//! reference attitude. Initial sensor biases come from the static window at
//! the start of the IMU stream.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fiveg::{
    process_stream, BaseStation, FivegConfig, FivegError, FivegFix, FivegMeasurement, FixMode,
    PipelineMode,
};
use crate::frames::{rotation_body_to_local, Attitude, FrameError, LocalFrame};
use crate::fusion::{
    run_cv_benchmark, run_lc_fusion, CvConfig, FusionConfig, FusionError, FusionRun,
};
use crate::mechanization::{mechanize, MechConfig, MechError, NavState};
use crate::sensors::{
    estimate_accel_bias, estimate_gyro_bias, BiasState, ImuSample, OdoSample, SensorError,
    SensorSpec, DEFAULT_MIN_WINDOW_S,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pipeline {
    /// Standalone mechanization; the odometer only signals stops.
    #[serde(rename = "ins-only")]
    InsOnly,
    /// EKF with odometer velocity updates.
    #[serde(rename = "ins-odo")]
    InsOdo,
    /// Constant-velocity filter on 5G fixes alone.
    #[serde(rename = "5g-only-cv")]
    FivegOnlyCv,
    /// EKF with odometer velocity and 5G position updates.
    #[serde(rename = "5g-obms")]
    FivegObms,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [
        Pipeline::InsOnly,
        Pipeline::InsOdo,
        Pipeline::FivegOnlyCv,
        Pipeline::FivegObms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::InsOnly => "ins-only",
            Pipeline::InsOdo => "ins-odo",
            Pipeline::FivegOnlyCv => "5g-only-cv",
            Pipeline::FivegObms => "5g-obms",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| PipelineError::UnknownPipeline(s.to_string()))
    }
}

/// Error classes, mapped to process exit codes by the command line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown pipeline `{0}`; valid names are ins-only, ins-odo, 5g-only-cv, 5g-obms")]
    UnknownPipeline(String),
    #[error("no LOS 5G fix to initialise the position from")]
    NoLosFix,
    #[error("IMU stream is empty after the initial fix at t = {0} s")]
    NoImu(f64),
    #[error("initial bias estimation failed: {0}")]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Fiveg(#[from] FivegError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Mech(#[from] MechError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PipelineError::UnknownPipeline(_) => ErrorKind::Config,
            PipelineError::Sensor(SensorError::InvalidSpec(_)) => ErrorKind::Config,
            PipelineError::Fusion(FusionError::InvalidGate(_)) => ErrorKind::Config,
            PipelineError::Fusion(
                FusionError::NotPsd { .. }
                | FusionError::Asymmetric { .. }
                | FusionError::SingularInnovation { .. },
            ) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

/// Switches for the ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub bias_removal: bool,
    pub stop_mechanism: bool,
    pub odometer: bool,
    pub gate_chi2: Option<f64>,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            bias_removal: true,
            stop_mechanism: true,
            odometer: true,
            gate_chi2: None,
        }
    }
}

/// Streams and static configuration shared by every pipeline.
#[derive(Debug, Clone, Copy)]
pub struct PipelineInputs<'a> {
    pub imu: &'a [ImuSample],
    pub odo: &'a [OdoSample],
    pub fiveg: &'a [FivegMeasurement],
    pub stations: &'a [BaseStation],
    pub frame: LocalFrame,
    pub fiveg_cfg: FivegConfig,
    pub spec: SensorSpec,
    /// Attitude supplied by the reference system at start-up.
    pub reference_attitude: Attitude,
    /// Length of the static window that follows the initial fix (s).
    pub static_window_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub pipeline: Pipeline,
    pub initial: NavState,
    pub initial_bias: BiasState,
    pub estimates: Vec<NavState>,
    /// 5G mode per fix epoch, as seen by the pipeline.
    pub modes: Vec<(f64, PipelineMode)>,
    /// Times of applied 5G position updates.
    pub position_updates: Vec<f64>,
    pub fixes: Vec<FivegFix>,
    pub filter: Option<FusionRun>,
}

/// Gyro and accelerometer biases from a static window with known attitude.
///
/// The Earth-rate component is removed from the gyro mean.
pub fn initial_bias(
    window: &[ImuSample],
    nav: &NavState,
    spec: &SensorSpec,
    frame: &LocalFrame,
) -> Result<BiasState, SensorError> {
    let earth = &frame.earth;
    let gyro_mean = estimate_gyro_bias(window, spec, DEFAULT_MIN_WINDOW_S)?;
    let to_body = rotation_body_to_local(&nav.att).transpose();
    let gyro = gyro_mean - to_body * earth.earth_rate_local(nav.pos.lat);
    let accel = estimate_accel_bias(
        window,
        &nav.att,
        earth.gravity(nav.pos.lat, nav.pos.h),
        spec,
        DEFAULT_MIN_WINDOW_S,
    )?;
    Ok(BiasState::new(gyro, accel))
}

/// Run one pipeline end to end.
pub fn run_pipeline(
    pipeline: Pipeline,
    inputs: &PipelineInputs<'_>,
    ablation: &Ablation,
) -> Result<PipelineOutput, PipelineError> {
    let fixes = process_stream(
        inputs.fiveg,
        inputs.stations,
        &inputs.fiveg_cfg,
        &inputs.frame,
    )?;
    let first = fixes
        .iter()
        .find(|f| f.mode == FixMode::Los)
        .ok_or(PipelineError::NoLosFix)?;
    let init = NavState::new(
        first.t,
        first.pos.expect("LOS fixes carry a position"),
        Vector3::zeros(),
        inputs.reference_attitude,
    );
    let start = inputs.imu.partition_point(|s| s.t <= init.t);
    let imu = &inputs.imu[start..];
    if imu.is_empty() {
        return Err(PipelineError::NoImu(init.t));
    }
    let later_fixes: Vec<FivegFix> = fixes.iter().filter(|f| f.t > init.t).cloned().collect();
    let odo: &[OdoSample] = if ablation.odometer { inputs.odo } else { &[] };

    let window_end = imu.partition_point(|s| s.t <= init.t + inputs.static_window_s);
    let initial_bias = if ablation.bias_removal {
        initial_bias(&imu[..window_end], &init, &inputs.spec, &inputs.frame)?
    } else {
        BiasState::default()
    };

    let modes_of = |fs: &[FivegFix]| -> Vec<(f64, PipelineMode)> {
        fs.iter()
            .map(|f| {
                let m = if f.mode == FixMode::Los {
                    PipelineMode::Fused
                } else {
                    PipelineMode::InsOnly
                };
                (f.t, m)
            })
            .collect()
    };

    let output = |estimates, modes, position_updates, filter| PipelineOutput {
        pipeline,
        initial: init,
        initial_bias,
        estimates,
        modes,
        position_updates,
        fixes: fixes.clone(),
        filter,
    };

    match pipeline {
        Pipeline::InsOnly => {
            let cfg = MechConfig {
                stop_mechanism: ablation.stop_mechanism,
                bias_removal: ablation.bias_removal,
                earth: inputs.frame.earth,
                ..MechConfig::default()
            };
            let run = mechanize(imu, odo, init, initial_bias, &cfg)?;
            Ok(output(run.states, Vec::new(), Vec::new(), None))
        }
        Pipeline::InsOdo | Pipeline::FivegObms => {
            let use_fiveg = pipeline == Pipeline::FivegObms;
            let cfg = FusionConfig {
                stop_mechanism: ablation.stop_mechanism,
                use_odometer: ablation.odometer,
                use_fiveg,
                gate_chi2: ablation.gate_chi2,
                earth: inputs.frame.earth,
                ..FusionConfig::default()
            };
            let run = run_lc_fusion(
                imu,
                odo,
                &later_fixes,
                init,
                initial_bias,
                &inputs.spec,
                &cfg,
            )?;
            let estimates = run.epochs.iter().map(|e| e.nav).collect();
            let position_updates = run
                .epochs
                .iter()
                .filter(|e| e.position_update)
                .map(|e| e.nav.t)
                .collect();
            let modes = if use_fiveg {
                modes_of(&later_fixes)
            } else {
                Vec::new()
            };
            Ok(output(estimates, modes, position_updates, Some(run)))
        }
        Pipeline::FivegOnlyCv => {
            let run = run_cv_benchmark(&later_fixes, &init, &inputs.frame, &CvConfig::default())?;
            let position_updates = run
                .iter()
                .filter(|e| e.mode == PipelineMode::Fused)
                .map(|e| e.nav.t)
                .collect();
            let modes = run.iter().map(|e| (e.nav.t, e.mode)).collect();
            Ok(output(
                run.iter().map(|e| e.nav).collect(),
                modes,
                position_updates,
                None,
            ))
        }
    }
}
