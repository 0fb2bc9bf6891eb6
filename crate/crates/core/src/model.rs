//! The IFS probability model, its code tables, densities and samplers.
//!
//! Truncated at depth `D`, a model is a mixture of one spherical Gaussian per
//! code `c ∈ [1,K]^[0,D]`: the image of `N₀` under
//! `post ∘ f_{c₁} ∘ … ∘ f_{c_d}`, weighted by `v_{|c|}·Π w_{cᵢ}`.
//!
//! Codes are kept in canonical order (by length, then lexicographically).
//! That order fixes the column layout of the responsibility matrix.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Points;
use crate::error::{check_dim, Error};
use crate::geometry::{spherical_log_density, Similitude, SphericalGaussian};
use crate::numeric::{self, ln_weight, LN_2PI};
use crate::Result;

/// Default maximum number of rows in a code table.
pub const DEFAULT_TABLE_LIMIT: usize = 1_000_000;

/// Chaos-game iterations discarded before emitting points.
pub const DEFAULT_BURN_IN: usize = 32;

/// Compositions longer than this are re-projected onto SO(H).
const REORTHONORMALIZE_EVERY: usize = 16;

const SIMPLEX_TOL: f64 = 1e-12;

/// `K` similitude components with weights `w`, depth weights `v` over
/// `0..=D`, and a post-transform.
#[derive(Debug, Clone, PartialEq)]
pub struct IfsModel {
    components: Vec<Similitude>,
    weights: Vec<f64>,
    depth_weights: Vec<f64>,
    post: Similitude,
}

fn check_simplex(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} must be non-negative and finite")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidParameter(format!("{name} must sum to 1, sums to {sum}")));
    }
    Ok(())
}

impl IfsModel {
    pub fn new(
        components: Vec<Similitude>,
        weights: Vec<f64>,
        depth_weights: Vec<f64>,
        post: Similitude,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("a model needs at least one component".into()));
        }
        if depth_weights.is_empty() {
            return Err(Error::InvalidParameter("depth weights must cover depth 0".into()));
        }
        check_dim(components.len(), weights.len())?;
        for c in &components {
            check_dim(post.dim(), c.dim())?;
        }
        check_simplex("component weights", &weights)?;
        check_simplex("depth weights", &depth_weights)?;
        Ok(IfsModel { components, weights, depth_weights, post })
    }

    pub fn dim(&self) -> usize {
        self.post.dim()
    }

    /// Number of components `K`.
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Maximum depth `D`.
    pub fn depth(&self) -> usize {
        self.depth_weights.len() - 1
    }

    pub fn components(&self) -> &[Similitude] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn depth_weights(&self) -> &[f64] {
        &self.depth_weights
    }

    pub fn post(&self) -> &Similitude {
        &self.post
    }

    pub fn set_post(&mut self, post: Similitude) -> Result<()> {
        check_dim(self.dim(), post.dim())?;
        self.post = post;
        Ok(())
    }

    pub fn set_component(&mut self, k: usize, f: Similitude) -> Result<()> {
        check_dim(self.dim(), f.dim())?;
        self.components[k] = f;
        Ok(())
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        check_dim(self.k(), weights.len())?;
        check_simplex("component weights", &weights)?;
        self.weights = weights;
        Ok(())
    }

    /// Replaces `v`; the new vector may have a different length, which changes
    /// the model depth.
    pub fn set_depth_weights(&mut self, depth_weights: Vec<f64>) -> Result<()> {
        if depth_weights.is_empty() {
            return Err(Error::InvalidParameter("depth weights must cover depth 0".into()));
        }
        check_simplex("depth weights", &depth_weights)?;
        self.depth_weights = depth_weights;
        Ok(())
    }

    /// `Σ_d d·v_d`.
    pub fn mean_depth(&self) -> f64 {
        self.depth_weights.iter().enumerate().map(|(d, v)| d as f64 * v).sum()
    }

    /// `ln v_{|c|} + Σᵢ ln w_{cᵢ}`; `−∞` when any factor is zero.
    pub fn code_log_prior(&self, code: &Code) -> Result<f64> {
        if code.len() > self.depth() {
            return Err(Error::InvalidParameter(format!(
                "code of length {} exceeds model depth {}",
                code.len(),
                self.depth()
            )));
        }
        let mut lp = ln_weight(self.depth_weights[code.len()]);
        for &digit in code.digits() {
            let w = self.weights.get(digit).ok_or_else(|| {
                Error::InvalidParameter(format!("digit {} out of range for K = {}", digit + 1, self.k()))
            })?;
            lp += ln_weight(*w);
        }
        Ok(lp)
    }

    /// The code table over all depths, endpoints including the post-transform.
    pub fn density_table(&self) -> Result<CodeTable> {
        CodeTable::build(self, self.depth(), true)
    }

    /// Exact log-density of the depth-`D` mixture at `x`.
    ///
    /// Builds the code table on every call; use [`IfsModel::density_table`]
    /// and [`CodeTable::log_density`] for repeated evaluation.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.density_table()?.log_density(x))
    }

    /// Mean log-density over a point set.
    pub fn mean_log_likelihood(&self, points: &Points) -> Result<f64> {
        check_dim(self.dim(), points.dim())?;
        if points.is_empty() {
            return Err(Error::InvalidData("cannot average over an empty point set".into()));
        }
        let table = self.density_table()?;
        let mut buf = vec![0.0; table.len()];
        let total: f64 = points.rows().map(|x| table.log_density_with(x, &mut buf)).sum();
        Ok(total / points.len() as f64)
    }

    /// Draws from the depth-`D` mixture: depth `d ~ v`, digits `~ w`,
    /// `z ~ N₀`, returning `post(f_{c₁}(… f_{c_d}(z)))`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Points {
        let h = self.dim();
        let mut out = Points::with_capacity(h, n);
        let mut digits = Vec::with_capacity(self.depth());
        let mut x = vec![0.0; h];
        let mut y = vec![0.0; h];
        for _ in 0..n {
            let depth = sample_index(&self.depth_weights, rng);
            digits.clear();
            digits.extend((0..depth).map(|_| sample_index(&self.weights, rng)));
            for xi in x.iter_mut() {
                *xi = rng.sample(StandardNormal);
            }
            for &k in digits.iter().rev() {
                self.components[k].apply_into(&x, &mut y);
                core::mem::swap(&mut x, &mut y);
            }
            self.post.apply_into(&x, &mut y);
            out.push(&y).expect("dimension is fixed");
        }
        out
    }

    /// Samples the attractor ("infinite depth") with the chaos game.
    pub fn sample_attractor<R: Rng + ?Sized>(&self, n: usize, burn_in: usize, rng: &mut R) -> Points {
        sample_attractor(self, n, burn_in, rng)
    }
}

/// Chaos game: starting at the origin, repeatedly apply a component drawn from
/// `w`. The first `burn_in` iterates are discarded; the next `n` are emitted
/// after the post-transform.
pub fn sample_attractor<R: Rng + ?Sized>(model: &IfsModel, n: usize, burn_in: usize, rng: &mut R) -> Points {
    let h = model.dim();
    let mut out = Points::with_capacity(h, n);
    let mut x = vec![0.0; h];
    let mut y = vec![0.0; h];
    for step in 0..burn_in + n {
        let k = sample_index(&model.weights, rng);
        model.components[k].apply_into(&x, &mut y);
        core::mem::swap(&mut x, &mut y);
        if step >= burn_in {
            model.post.apply_into(&x, &mut y);
            out.push(&y).expect("dimension is fixed");
        }
    }
    out
}

/// Index drawn from a probability vector by inverse-CDF lookup.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// A sequence of zero-based component indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Code(Vec<usize>);

impl Code {
    pub fn empty() -> Self {
        Code(Vec::new())
    }

    pub fn new(digits: Vec<usize>) -> Self {
        Code(digits)
    }

    pub fn digits(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<usize> {
        self.0.first().copied()
    }
}

impl fmt::Display for Code {
    /// One-based digits, e.g. `⟨1,3⟩`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", d + 1)?;
        }
        f.write_str(">")
    }
}

/// Number of codes of length `0..=depth` over `k` symbols. Fails when
/// `K^(D+1)` (or, for `K = 1`, the code count itself) exceeds `limit`.
pub fn code_count(k: usize, depth: usize, limit: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=depth {
        total = total.saturating_add(level);
        level = level.saturating_mul(k as u128);
    }
    let size = if k == 1 { total } else { level };
    if size > limit as u128 {
        return Err(Error::Capacity { codes: size, limit });
    }
    Ok(total as usize)
}

/// All codes in `[1,K]^[0,D]` in canonical order.
pub fn enumerate_codes(k: usize, depth: usize) -> Result<Vec<Code>> {
    enumerate_codes_with_limit(k, depth, DEFAULT_TABLE_LIMIT)
}

pub fn enumerate_codes_with_limit(k: usize, depth: usize, limit: usize) -> Result<Vec<Code>> {
    let total = code_count(k, depth, limit)?;
    let mut codes = Vec::with_capacity(total);
    codes.push(Code::empty());
    let mut start = 0;
    for _ in 0..depth {
        let end = codes.len();
        for parent in start..end {
            for digit in 0..k {
                let mut digits = codes[parent].0.clone();
                digits.push(digit);
                codes.push(Code(digits));
            }
        }
        start = end;
    }
    Ok(codes)
}

/// One row of a [`CodeTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct CodeEntry {
    pub code: Code,
    /// `f_{c₁} ∘ … ∘ f_{c_d}`, never including the post-transform.
    pub inner: Similitude,
    /// Image of `N₀` under `inner`, or under `post ∘ inner` when the table
    /// was built with the post-transform.
    pub endpoint: SphericalGaussian,
    pub log_prior: f64,
}

/// Every code up to some depth with its composed similitude, endpoint Gaussian
/// and log-prior, in canonical order.
#[derive(Debug, Clone)]
pub struct CodeTable {
    k: usize,
    max_depth: usize,
    includes_post: bool,
    entries: Vec<CodeEntry>,
    /// `log_prior − H·ln σ − (H/2)·ln 2π` per entry.
    log_norm: Vec<f64>,
    /// `1 / (2σ²)` per entry.
    half_precision: Vec<f64>,
}

impl CodeTable {
    /// Builds the table for codes of length `0..=max_depth` with the default
    /// size limit.
    pub fn build(model: &IfsModel, max_depth: usize, include_post: bool) -> Result<Self> {
        Self::build_with_limit(model, max_depth, include_post, DEFAULT_TABLE_LIMIT)
    }

    pub fn build_with_limit(model: &IfsModel, max_depth: usize, include_post: bool, limit: usize) -> Result<Self> {
        if max_depth > model.depth() {
            return Err(Error::InvalidParameter(format!(
                "table depth {max_depth} exceeds model depth {}",
                model.depth()
            )));
        }
        let k = model.k();
        let h = model.dim();
        let total = code_count(k, max_depth, limit)?;
        let ln_w: Vec<f64> = model.weights.iter().map(|&w| ln_weight(w)).collect();
        let ln_v: Vec<f64> = model.depth_weights.iter().map(|&v| ln_weight(v)).collect();

        let mut inner: Vec<(Code, Similitude, f64)> = Vec::with_capacity(total);
        inner.push((Code::empty(), Similitude::identity(h), 0.0));
        let mut start = 0;
        for depth in 1..=max_depth {
            let end = inner.len();
            for parent in start..end {
                for digit in 0..k {
                    let (pcode, pmap, pw) = &inner[parent];
                    let mut map = pmap.compose_unchecked(&model.components[digit]);
                    if depth % REORTHONORMALIZE_EVERY == 0 {
                        map = map.reorthonormalized();
                    }
                    let mut digits = pcode.0.clone();
                    digits.push(digit);
                    let entry = (Code(digits), map, pw + ln_w[digit]);
                    inner.push(entry);
                }
            }
            start = end;
        }

        let n0 = SphericalGaussian::standard(h);
        let mut entries = Vec::with_capacity(total);
        let mut log_norm = Vec::with_capacity(total);
        let mut half_precision = Vec::with_capacity(total);
        for (code, map, sum_ln_w) in inner {
            let endpoint = if include_post {
                model.post.compose_unchecked(&map).transform_gaussian(&n0)
            } else {
                map.transform_gaussian(&n0)
            }
            .expect("dimensions agree");
            let log_prior = ln_v[code.len()] + sum_ln_w;
            let sigma = endpoint.sigma();
            log_norm.push(log_prior - h as f64 * sigma.ln() - 0.5 * h as f64 * LN_2PI);
            half_precision.push(0.5 / (sigma * sigma));
            entries.push(CodeEntry { code, inner: map, endpoint, log_prior });
        }
        Ok(CodeTable { k, max_depth, includes_post: include_post, entries, log_norm, half_precision })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn includes_post(&self) -> bool {
        self.includes_post
    }

    pub fn entries(&self) -> &[CodeEntry] {
        &self.entries
    }

    pub fn entry(&self, j: usize) -> &CodeEntry {
        &self.entries[j]
    }

    /// Index of the first code of length `depth`.
    pub fn depth_offset(&self, depth: usize) -> usize {
        // Σ_{e<depth} K^e
        let mut offset = 0;
        let mut level = 1;
        for _ in 0..depth {
            offset += level;
            level *= self.k;
        }
        offset
    }

    /// Row index of `⟨k⟩ ++ code`, where `code` is row `j` of a table over
    /// the same `K`.
    pub fn prefixed_index(&self, k: usize, j: usize, code_len: usize) -> usize {
        let rank = j - self.depth_offset(code_len);
        self.depth_offset(code_len + 1) + k * self.k.pow(code_len as u32) + rank
    }

    /// Fills `out[j]` with `log_prior_j + ln N_j(x)`.
    pub fn log_joint_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate().take(self.entries.len()) {
            let mean = self.entries[j].endpoint.mean();
            let d2: f64 = mean.iter().zip(x).map(|(m, xi)| (xi - m) * (xi - m)).sum();
            *o = self.log_norm[j] - d2 * self.half_precision[j];
        }
    }

    /// Log-sum-exp of the mixture at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.len()];
        self.log_density_with(x, &mut buf)
    }

    /// [`CodeTable::log_density`] with a caller-provided scratch buffer of
    /// length [`CodeTable::len`].
    pub fn log_density_with(&self, x: &[f64], buf: &mut [f64]) -> f64 {
        self.log_joint_into(x, buf);
        numeric::log_sum_exp(&buf[..self.len()])
    }

    /// Direct per-entry log density, mainly for tests and diagnostics.
    pub fn endpoint_log_density(&self, j: usize, x: &[f64]) -> f64 {
        let e = &self.entries[j].endpoint;
        spherical_log_density(e.mean(), e.sigma(), x)
    }
}
