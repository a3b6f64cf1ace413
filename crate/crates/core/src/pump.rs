//! Channel flow driven only by a body torque on the spin equation.
//!
//! The channel `[0, L] x [0, 1]` has no-slip walls at `y = 0` and `y = 1` and
//! open (do-nothing) ends. The torque density is
//! `g(t, y) = -amplitude * (t / T) * sin(theta_i(y))`, with `f = 0`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fem::{scalar_fn, BoundaryData, Prescription};
use crate::mesh::{generate_rect_mesh, BoundaryMarker, MeshConfig};
use crate::schemes::{
    run, Discretization, InitialData, MaterialParams, Problem, RunSummary, SchemeKind, Sources,
    TimeGrid, TimeState,
};

pub const PROFILES: std::ops::RangeInclusive<usize> = 1..=7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpConfig {
    /// Channel length.
    pub length: f64,
    /// Cells per unit length.
    pub n: usize,
    /// Torque scale.
    pub amplitude: f64,
    pub profile: usize,
    pub final_time: f64,
    pub tau: f64,
    pub params: MaterialParams,
}

impl Default for PumpConfig {
    fn default() -> Self {
        Self {
            length: 1.0,
            n: 40,
            amplitude: 1.0,
            profile: 1,
            final_time: 1.0,
            tau: 1.0 / 50.0,
            params: MaterialParams::unit(),
        }
    }
}

impl PumpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length >= 1.0 && self.length.is_finite()) {
            return Err(Error::InvalidInput(format!("channel length {} must be at least 1", self.length)));
        }
        if self.n == 0 {
            return Err(Error::InvalidInput("cells per unit length must be positive".into()));
        }
        let nx = self.length * self.n as f64;
        if (nx - nx.round()).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "length {} times {} cells per unit is not an integer cell count",
                self.length, self.n
            )));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidInput(format!("amplitude {} must be nonnegative", self.amplitude)));
        }
        if !PROFILES.contains(&self.profile) {
            return Err(Error::InvalidInput(format!("profile index {} outside 1..=7", self.profile)));
        }
        if self.final_time.is_nan() || self.final_time <= 0.0 {
            return Err(Error::InvalidTimeGrid(format!("T = {} must be positive", self.final_time)));
        }
        self.params.validate()?;
        TimeGrid::from_final_time(self.final_time, self.tau).map(|_| ())
    }

    pub fn mesh_config(&self) -> MeshConfig {
        MeshConfig::new((self.length * self.n as f64).round() as usize, self.n, self.length, 1.0)
    }
}

/// Angle between the magnetizing field and the magnetization across the
/// channel. Profile 1 is linear; profiles 2..=7 are quintics. All satisfy
/// `theta(0) = pi/2`, `theta(1/2) = 0`, `theta(1) = -pi/2`.
pub fn theta_profile(i: usize, y: f64) -> Result<f64> {
    if !PROFILES.contains(&i) {
        return Err(Error::InvalidInput(format!("profile index {i} outside 1..=7")));
    }
    if i == 1 {
        return Ok(-PI * (y - 0.5));
    }
    let fi = i as f64;
    let a = fi * fi + 10.0 * fi;
    let num = 480.0 * y.powi(5) - 1200.0 * y.powi(4) - 4.0 * y.powi(3) * (a - 275.0) + 6.0 * y * y * (a - 75.0)
        - fi * fi
        - 5.0 * (2.0 * fi - 7.0);
    Ok(-PI * num / (2.0 * (a - 35.0)))
}

/// Torque density `g(t, y)`, ramped linearly from zero at `t = 0`.
pub fn pump_forcing(config: &PumpConfig, t: f64, y: f64) -> Result<f64> {
    let theta = theta_profile(config.profile, y)?;
    Ok(-config.amplitude * (t / config.final_time) * theta.sin())
}

/// No-slip, zero-spin walls; natural conditions at both ends.
pub fn pump_boundary_data() -> BoundaryData {
    let mut bcs = BoundaryData::no_slip();
    for side in [BoundaryMarker::Left, BoundaryMarker::Right] {
        bcs.set_velocity(side, Prescription::Natural);
        bcs.set_spin(side, Prescription::Natural);
    }
    bcs
}

pub fn pump_problem(config: &PumpConfig) -> Result<Problem> {
    config.validate()?;
    let c = *config;
    let g = if c.amplitude == 0.0 {
        None
    } else {
        Some(scalar_fn(move |_, y, t| {
            pump_forcing(&c, t, y).expect("profile validated")
        }))
    };
    Ok(Problem {
        params: config.params,
        bcs: pump_boundary_data(),
        sources: Sources { f: None, g },
    })
}

/// Horizontal velocity along the outlet `x = L` at the final time.
#[derive(Debug, Clone, PartialEq)]
pub struct OutletProfile {
    pub profile: usize,
    /// Ascending ordinates of the velocity nodes on the outlet.
    pub y: Vec<f64>,
    pub u_x: Vec<f64>,
    /// `integral_0^1 u_x(L, y) dy` of the discrete trace.
    pub mean_flux: f64,
}

/// Samples the outlet trace of a velocity field.
pub fn outlet_profile(disc: &Discretization, u: &[f64], profile: usize) -> OutletProfile {
    let vm = &disc.velocity;
    let mut nodes: Vec<(f64, f64)> = vm.boundary_dofs[BoundaryMarker::Right.index()]
        .iter()
        .filter_map(|&d| {
            let (node, comp) = vm.node_of(d);
            (comp == 0).then(|| (vm.node_coords[node][1], u[node]))
        })
        .collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes.dedup_by(|a, b| a.0 == b.0);
    // Simpson on each edge integrates the quadratic trace exactly
    let mean_flux = nodes
        .windows(3)
        .step_by(2)
        .map(|w| (w[2].0 - w[0].0) / 6.0 * (w[0].1 + 4.0 * w[1].1 + w[2].1))
        .sum();
    let (y, u_x) = nodes.into_iter().unzip();
    OutletProfile {
        profile,
        y,
        u_x,
        mean_flux,
    }
}

#[derive(Debug, Clone)]
pub struct PumpResult {
    pub outlet: OutletProfile,
    pub disc: Discretization,
    pub summary: RunSummary,
}

impl PumpResult {
    pub fn final_state(&self) -> &TimeState {
        &self.summary.final_state
    }
}

/// Runs the first-order scheme from rest to `T`.
pub fn run_pump(config: &PumpConfig) -> Result<PumpResult> {
    let problem = pump_problem(config)?;
    let disc = Discretization::new(generate_rect_mesh(config.mesh_config())?)?;
    let grid = TimeGrid::from_final_time(config.final_time, config.tau)?;
    let summary = run(&disc, &problem, SchemeKind::FirstOrder, &grid, InitialData::Rest, |_, _, _, _, _| {})?;
    let outlet = outlet_profile(&disc, &summary.final_state.u, config.profile);
    Ok(PumpResult { outlet, disc, summary })
}
