use std::sync::Arc;

use num_complex::Complex64;

use super::{build_operator, DdGrid, SparseDdOperator, ZERO};
use crate::channel::{steering, ChannelParams, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;

/// Departure geometry of a path, present when the per-antenna gains follow
/// the URA steering law `h_q = g * steering(theta, phi, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGeometry {
    pub g: Complex64,
    pub theta: f64,
    pub phi: f64,
}

/// One path as seen by every BS antenna.
#[derive(Debug, Clone)]
pub struct PathTerm {
    pub op: Arc<SparseDdOperator>,
    /// `h_{q,s,i}` for `q = 0..Q`.
    pub gains: Vec<Complex64>,
    pub geometry: Option<PathGeometry>,
}

/// All per-path operators and antenna gains of one realization.
#[derive(Debug, Clone)]
pub struct MultiUserChannel {
    m: usize,
    n: usize,
    q: usize,
    qh: usize,
    qv: usize,
    d_over_lambda: f64,
    uts: Vec<Vec<PathTerm>>,
}

impl MultiUserChannel {
    pub fn from_params(params: &ChannelParams, cfg: &SystemConfig) -> Result<Self> {
        let q = cfg.q();
        let mut uts = Vec::with_capacity(params.uts.len());
        for ut in &params.uts {
            let mut terms = Vec::with_capacity(ut.paths.len());
            for p in &ut.paths {
                let op = build_operator(p.l_tau, p.nu, cfg.m, cfg.n, cfg.delta_f)?;
                let gains = (0..q)
                    .map(|qi| p.g * steering(p.theta, p.phi, qi, cfg))
                    .collect();
                terms.push(PathTerm {
                    op,
                    gains,
                    geometry: Some(PathGeometry {
                        g: p.g,
                        theta: p.theta,
                        phi: p.phi,
                    }),
                });
            }
            uts.push(terms);
        }
        Ok(Self::new_unchecked(cfg, uts))
    }

    /// Builds a channel from explicit per-antenna path terms.
    pub fn from_terms(cfg: &SystemConfig, uts: Vec<Vec<PathTerm>>) -> Result<Self> {
        for term in uts.iter().flatten() {
            if term.gains.len() != cfg.q() {
                return Err(Error::DimensionMismatch {
                    expected: cfg.q(),
                    got: term.gains.len(),
                });
            }
            if term.op.m() != cfg.m || term.op.n() != cfg.n {
                return Err(Error::DimensionMismatch {
                    expected: cfg.mn(),
                    got: term.op.mn(),
                });
            }
        }
        Ok(Self::new_unchecked(cfg, uts))
    }

    fn new_unchecked(cfg: &SystemConfig, uts: Vec<Vec<PathTerm>>) -> Self {
        Self {
            m: cfg.m,
            n: cfg.n,
            q: cfg.q(),
            qh: cfg.qh,
            qv: cfg.qv,
            d_over_lambda: cfg.d_over_lambda,
            uts,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn qh(&self) -> usize {
        self.qh
    }

    pub fn qv(&self) -> usize {
        self.qv
    }

    pub fn d_over_lambda(&self) -> f64 {
        self.d_over_lambda
    }

    pub fn num_uts(&self) -> usize {
        self.uts.len()
    }

    pub fn paths(&self, s: usize) -> Result<&[PathTerm]> {
        self.uts
            .get(s)
            .map(|v| v.as_slice())
            .ok_or(Error::IndexOutOfRange {
                what: "UT",
                index: s,
                len: self.uts.len(),
            })
    }

    /// `H_{q,s} = Σ_i h_{q,s,i} A_{s,i}`.
    pub fn effective(&self, q: usize, s: usize) -> Result<EffectiveChannel> {
        if q >= self.q {
            return Err(Error::MissingChannel { q, s });
        }
        let paths = self.paths(s).map_err(|_| Error::MissingChannel { q, s })?;
        Ok(EffectiveChannel {
            m: self.m,
            n: self.n,
            terms: paths.iter().map(|p| (p.gains[q], p.op.clone())).collect(),
        })
    }
}

/// Effective DD channel between one antenna and one UT.
#[derive(Debug, Clone)]
pub struct EffectiveChannel {
    m: usize,
    n: usize,
    terms: Vec<(Complex64, Arc<SparseDdOperator>)>,
}

impl EffectiveChannel {
    pub fn new(m: usize, n: usize, terms: Vec<(Complex64, Arc<SparseDdOperator>)>) -> Result<Self> {
        for (_, op) in &terms {
            if op.m() != m || op.n() != n {
                return Err(Error::DimensionMismatch {
                    expected: m * n,
                    got: op.mn(),
                });
            }
        }
        Ok(Self { m, n, terms })
    }

    pub fn terms(&self) -> &[(Complex64, Arc<SparseDdOperator>)] {
        &self.terms
    }

    pub fn apply(&self, x: &DdGrid) -> Result<DdGrid> {
        x.check_shape(self.m, self.n)?;
        let mut y = DdGrid::zeros(self.m, self.n);
        for (h, op) in &self.terms {
            op.apply_acc(*h, x.as_slice(), y.as_mut_slice());
        }
        Ok(y)
    }

    pub fn apply_adjoint(&self, y: &DdGrid) -> Result<DdGrid> {
        y.check_shape(self.m, self.n)?;
        let mut x = DdGrid::zeros(self.m, self.n);
        for (h, op) in &self.terms {
            op.apply_adjoint_acc(h.conj(), y.as_slice(), x.as_mut_slice());
        }
        Ok(x)
    }

    pub fn to_dense(&self) -> CMatrix {
        let mn = self.m * self.n;
        let mut out = CMatrix::zeros(mn, mn);
        for (h, op) in &self.terms {
            out.add_scaled(*h, &op.to_dense())
                .expect("operators share the grid shape");
        }
        out
    }

    /// Largest count of structurally nonzero entries in any column.
    pub fn max_column_nnz(&self) -> usize {
        let mut worst = 0;
        for kp in 0..self.n {
            for lp in 0..self.m {
                let mut rows: Vec<usize> = Vec::new();
                for (h, op) in &self.terms {
                    if *h == ZERO {
                        continue;
                    }
                    let (l, vals) = op.column(kp, lp);
                    for (k, v) in vals.iter().enumerate() {
                        if *v != ZERO {
                            rows.push(k * self.m + l);
                        }
                    }
                }
                rows.sort_unstable();
                rows.dedup();
                worst = worst.max(rows.len());
            }
        }
        worst
    }
}

/// Effective channel between antenna `q` and UT `s` of a sampled realization.
pub fn effective_channel(
    params: &ChannelParams,
    q: usize,
    s: usize,
    cfg: &SystemConfig,
) -> Result<EffectiveChannel> {
    let ut = params.uts.get(s).ok_or(Error::IndexOutOfRange {
        what: "UT",
        index: s,
        len: params.uts.len(),
    })?;
    let mut terms = Vec::with_capacity(ut.paths.len());
    for i in 0..ut.paths.len() {
        let h = crate::channel::antenna_path_gain(params, q, s, i, cfg)?;
        let p = &ut.paths[i];
        terms.push((h, build_operator(p.l_tau, p.nu, cfg.m, cfg.n, cfg.delta_f)?));
    }
    EffectiveChannel::new(cfg.m, cfg.n, terms)
}
