//! Hazard kernels evaluated over a whole quadrature mesh at once.
//!
//! Every hazard in the model is an isotropic Gaussian in the trap location
//! whose centre is an affine function of the activity centre:
//! `mu = pull * anchor + (1 - pull) * s`. On a rectangular mesh the kernel
//! factorises into an x part and a y part, so one trap costs `nx + ny`
//! exponentials and an `nx * ny` outer-product accumulation instead of
//! `nx * ny` exponentials.

use crate::geometry::{Point, SpatialMesh, TrapArray};
use crate::hazard::{ou_variance_unchecked, MemoryState};

/// Gaussian hazard kernel shared by all activity centres at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelTerm {
    pub anchor: Point,
    /// Weight on `anchor`; the activity centre gets `1 - pull`.
    pub pull: f64,
    /// Per-axis variance.
    pub var: f64,
}

impl KernelTerm {
    /// The half-normal kernel centred on the activity centre.
    pub fn limiting(sigma2: f64) -> Self {
        KernelTerm {
            anchor: Point::new(0.0, 0.0),
            pull: 0.0,
            var: sigma2,
        }
    }

    /// The memory kernel at time `t`, strictly after `mem.time`.
    pub fn after(mem: &MemoryState, t: f64, sigma2: f64, beta: f64) -> Self {
        let dt = t - mem.time;
        KernelTerm {
            anchor: mem.location,
            pull: (-beta * dt).exp(),
            var: ou_variance_unchecked(sigma2, beta, dt),
        }
    }
}

/// Trap locations paired with the axes of a rectangular mesh.
#[derive(Debug, Clone)]
pub struct MeshKernel {
    traps: Vec<Point>,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

/// Per-thread work buffers for [`MeshKernel`].
#[derive(Debug, Default)]
pub struct Scratch {
    fx: Vec<f64>,
    fy: Vec<f64>,
}

impl MeshKernel {
    pub fn new(traps: &TrapArray, mesh: &SpatialMesh) -> Self {
        MeshKernel {
            traps: traps.locations().collect(),
            xs: mesh.xs().to_vec(),
            ys: mesh.ys().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn trap(&self, k: usize) -> Point {
        self.traps[k]
    }

    /// `out[m] += scale * sum_k exp(-|z_k - mu_m|^2 / (2 var))`.
    pub fn add_cumulative(&self, out: &mut [f64], scale: f64, term: &KernelTerm, scratch: &mut Scratch) {
        debug_assert_eq!(out.len(), self.len());
        let nx = self.xs.len();
        let keep = 1.0 - term.pull;
        let inv = 0.5 / term.var;
        scratch.fx.resize(nx, 0.0);
        scratch.fy.resize(self.ys.len(), 0.0);
        for z in &self.traps {
            let ux = z.x - term.pull * term.anchor.x;
            let uy = z.y - term.pull * term.anchor.y;
            let mut any_x = false;
            for (f, &x) in scratch.fx.iter_mut().zip(&self.xs) {
                let d = ux - keep * x;
                *f = (-d * d * inv).exp();
                any_x |= *f > 0.0;
            }
            if !any_x {
                continue;
            }
            for (f, &y) in scratch.fy.iter_mut().zip(&self.ys) {
                let d = uy - keep * y;
                *f = scale * (-d * d * inv).exp();
            }
            for (row, &fy) in out.chunks_exact_mut(nx).zip(&scratch.fy) {
                if fy == 0.0 {
                    continue;
                }
                for (o, &fx) in row.iter_mut().zip(&scratch.fx) {
                    *o += fy * fx;
                }
            }
        }
    }

    /// `out[m] += -|z_k - mu_m|^2 / (2 var)`, the log kernel at trap `k`.
    pub fn add_log_kernel(&self, out: &mut [f64], k: usize, term: &KernelTerm, scratch: &mut Scratch) {
        debug_assert_eq!(out.len(), self.len());
        let nx = self.xs.len();
        let keep = 1.0 - term.pull;
        let inv = 0.5 / term.var;
        let z = self.traps[k];
        let ux = z.x - term.pull * term.anchor.x;
        let uy = z.y - term.pull * term.anchor.y;
        scratch.fx.clear();
        scratch.fx.extend(self.xs.iter().map(|&x| {
            let d = ux - keep * x;
            -d * d * inv
        }));
        scratch.fy.clear();
        scratch.fy.extend(self.ys.iter().map(|&y| {
            let d = uy - keep * y;
            -d * d * inv
        }));
        for (row, &gy) in out.chunks_exact_mut(nx).zip(&scratch.fy) {
            for (o, &gx) in row.iter_mut().zip(&scratch.fx) {
                *o += gx + gy;
            }
        }
    }

    /// Cumulative half-normal hazard at every mesh point.
    pub fn limiting_surface(&self, h0: f64, sigma2: f64, scratch: &mut Scratch) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.add_cumulative(&mut out, h0, &KernelTerm::limiting(sigma2), scratch);
        out
    }
}
