//! Layers with explicit backward passes: group-matrix convolution (exact or
//! with an error term), coset pooling, stride, padded convolution on windows
//! of infinite lattices and convolution over homogeneous spaces.
//!
//! Signals are `[channel][index]`. Every layer's `backward` takes the same
//! input that was fed to `forward`, so a network only has to keep its inputs.

use std::collections::{hash_map::Entry, HashMap, VecDeque};
use std::fmt::Debug;
use std::hash::Hash;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::displacement::{numerical_rank, row_cycle_difference, span_dimension, RANK_REL_TOL};
use crate::error::{Error, Result};
use crate::group::{CosetPartition, ElemId, FiniteGroup, HomogeneousSpace, Subgroup};
use crate::group_matrix::Dense;

pub type Signal = Vec<Vec<f64>>;

/// Parameter gradient (flat, same layout as `params`) and input gradient.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub dparams: Vec<f64>,
    pub dx: Signal,
}

pub trait Layer: Send + Sync + Debug {
    fn kind(&self) -> &'static str;
    /// (channels, length) accepted by `forward`.
    fn in_shape(&self) -> (usize, usize);
    fn out_shape(&self) -> (usize, usize);
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn forward(&self, x: &Signal) -> Result<Signal>;
    fn backward(&self, x: &Signal, dy: &Signal) -> Result<LayerGrads>;
    /// Group convolution underlying this layer, if any.
    fn as_gconv(&self) -> Option<&GMConvLayer> {
        None
    }
}

fn check_shape(kind: &str, what: &str, s: &Signal, (c, n): (usize, usize)) -> Result<()> {
    if s.len() != c || s.iter().any(|ch| ch.len() != n) {
        let got: Vec<usize> = s.iter().map(Vec::len).collect();
        return Err(Error::LayerShape {
            layer: 0,
            msg: format!("{kind}: {what} expected {c} channels of length {n}, got lengths {got:?}"),
        });
    }
    Ok(())
}

fn zeros(c: usize, n: usize) -> Signal {
    vec![vec![0.0; n]; c]
}

fn kaiming(rng: &mut impl Rng, count: usize, fan_in: usize) -> Vec<f64> {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    (0..count).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Error term added to a group-matrix convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorSpec {
    None,
    /// Free coefficients on every support row of F: `F_s = w_s·1 + e_s`.
    Full,
    /// `r` free columns of F (rows of the channel matrix), rank(D) ≤ r.
    Ldr(usize),
}

impl ErrorSpec {
    /// Parses `none`, `full` or `ldr(r)`.
    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim();
        match t {
            "none" => return Ok(ErrorSpec::None),
            "full" => return Ok(ErrorSpec::Full),
            _ => {}
        }
        t.strip_prefix("ldr(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|r| r.trim().parse().ok())
            .map(ErrorSpec::Ldr)
            .ok_or_else(|| Error::Config(format!("error term '{s}': expected none, full or ldr(r)")))
    }
}

/// Multi-channel convolution `y[o] = Σ_i Σ_{s ∈ N_k} w[o][i][s] B_s x[i]`
/// plus an optional error term.
///
/// Parameters are laid out as weights `[o][i][s]` followed by the error
/// block: `[o][i][s][h]` for `Full`, `[o][i][j][g]` for `Ldr`.
#[derive(Debug, Clone)]
pub struct GMConvLayer {
    group: Arc<FiniteGroup>,
    k: usize,
    support: Vec<ElemId>,
    in_ch: usize,
    out_ch: usize,
    error: ErrorSpec,
    ldr_positions: Vec<ElemId>,
    params: Vec<f64>,
    /// `gathers[s][h] = s⁻¹h`, the column of the one in row h of B_s.
    gathers: Vec<Vec<u32>>,
    /// `ldr_src[j][g] = g⁻¹ p_j`.
    ldr_src: Vec<Vec<u32>>,
}

impl GMConvLayer {
    /// Kaiming-uniform weights on ±√(1/(in·N_k)); error parameters start at 0.
    pub fn new(
        group: &Arc<FiniteGroup>,
        k: usize,
        in_ch: usize,
        out_ch: usize,
        error: ErrorSpec,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layer = Self::zeroed(group, k, in_ch, out_ch, error)?;
        let nk = layer.support.len();
        let w = kaiming(rng, out_ch * in_ch * nk, in_ch * nk);
        layer.params[..w.len()].copy_from_slice(&w);
        Ok(layer)
    }

    pub fn zeroed(group: &Arc<FiniteGroup>, k: usize, in_ch: usize, out_ch: usize, error: ErrorSpec) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 {
            return Err(Error::Config("convolution needs at least one channel".into()));
        }
        let n = group.order();
        let support = group.word_ball(k);
        let ldr_positions: Vec<ElemId> = match error {
            ErrorSpec::Ldr(r) if r > n => {
                return Err(Error::Config(format!("ldr rank {r} exceeds group order {n}")))
            }
            // positions nearest the identity first, same order as word balls
            ErrorSpec::Ldr(r) => group.word_ball(group.diameter())[..r].to_vec(),
            _ => Vec::new(),
        };
        let gathers = support
            .iter()
            .map(|&s| {
                let si = group.inv(s);
                (0..n).map(|h| group.mul(si, h) as u32).collect()
            })
            .collect();
        let ldr_src = ldr_positions
            .iter()
            .map(|&p| (0..n).map(|g| group.mul(group.inv(g), p) as u32).collect())
            .collect();
        let mut layer = GMConvLayer {
            group: group.clone(),
            k,
            support,
            in_ch,
            out_ch,
            error,
            ldr_positions,
            params: Vec::new(),
            gathers,
            ldr_src,
        };
        layer.params = vec![0.0; layer.weight_count() + layer.error_count()];
        Ok(layer)
    }

    /// Sets the kernel of one channel pair from coefficients over the
    /// support (in `support()` order).
    pub fn set_kernel(&mut self, o: usize, i: usize, coeffs: &[f64]) {
        let nk = self.support.len();
        let off = (o * self.in_ch + i) * nk;
        self.params[off..off + nk].copy_from_slice(coeffs);
    }

    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn radius(&self) -> usize {
        self.k
    }

    pub fn support(&self) -> &[ElemId] {
        &self.support
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.in_ch, self.out_ch)
    }

    pub fn error_spec(&self) -> ErrorSpec {
        self.error
    }

    pub fn ldr_positions(&self) -> &[ElemId] {
        &self.ldr_positions
    }

    /// Weights per channel pair, N_k.
    pub fn weights_per_pair(&self) -> usize {
        self.support.len()
    }

    pub fn weight_count(&self) -> usize {
        self.out_ch * self.in_ch * self.support.len()
    }

    pub fn error_count(&self) -> usize {
        let n = self.group.order();
        let per_pair = match self.error {
            ErrorSpec::None => 0,
            ErrorSpec::Full => self.support.len() * n,
            ErrorSpec::Ldr(r) => r * n,
        };
        self.out_ch * self.in_ch * per_pair
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.weight_count()]
    }

    pub fn error_params(&self) -> &[f64] {
        &self.params[self.weight_count()..]
    }

    pub fn error_params_mut(&mut self) -> &mut [f64] {
        let nw = self.weight_count();
        &mut self.params[nw..]
    }

    fn pair(&self, o: usize, i: usize) -> usize {
        o * self.in_ch + i
    }

    /// Rows of F for one channel pair: `F_g[h]`, zero off the support.
    pub fn pair_form(&self, o: usize, i: usize) -> Dense {
        let n = self.group.order();
        let nk = self.support.len();
        let p = self.pair(o, i);
        let w = &self.weights()[p * nk..(p + 1) * nk];
        let mut f = Dense::zeros(n, n);
        for (si, &s) in self.support.iter().enumerate() {
            for h in 0..n {
                f[(s, h)] = w[si];
            }
        }
        let e = self.error_params();
        match self.error {
            ErrorSpec::None => {}
            ErrorSpec::Full => {
                let blk = &e[p * nk * n..(p + 1) * nk * n];
                for (si, &s) in self.support.iter().enumerate() {
                    for h in 0..n {
                        f[(s, h)] += blk[si * n + h];
                    }
                }
            }
            ErrorSpec::Ldr(r) => {
                let blk = &e[p * r * n..(p + 1) * r * n];
                for (j, &pos) in self.ldr_positions.iter().enumerate() {
                    for g in 0..n {
                        f[(g, pos)] += blk[j * n + g];
                    }
                }
            }
        }
        f
    }

    /// Dense |G|×|G| matrix of one channel pair, `Σ_g diag(F_g) B_g`.
    pub fn pair_matrix(&self, o: usize, i: usize) -> Dense {
        let g = &self.group;
        let n = g.order();
        let f = self.pair_form(o, i);
        Dense::from_fn(n, n, |h, c| f[(g.mul(h, g.inv(c)), h)])
    }

    /// Output restricted to the given rows (all rows when `rows` is `None`).
    fn forward_rows(&self, x: &Signal, rows: Option<&[ElemId]>) -> Signal {
        let n = self.group.order();
        let nk = self.support.len();
        let all: Vec<ElemId>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..n).collect();
                &all
            }
        };
        let w = self.weights();
        let e = self.error_params();
        let mut y = zeros(self.out_ch, rows.len());
        for (o, yo) in y.iter_mut().enumerate() {
            for (i, xi) in x.iter().enumerate() {
                let p = self.pair(o, i);
                for (si, gather) in self.gathers.iter().enumerate() {
                    let c = w[p * nk + si];
                    match self.error {
                        ErrorSpec::Full => {
                            let blk = &e[(p * nk + si) * n..(p * nk + si + 1) * n];
                            for (r, &h) in rows.iter().enumerate() {
                                yo[r] += (c + blk[h]) * xi[gather[h] as usize];
                            }
                        }
                        _ => {
                            for (r, &h) in rows.iter().enumerate() {
                                yo[r] += c * xi[gather[h] as usize];
                            }
                        }
                    }
                }
                if let ErrorSpec::Ldr(rk) = self.error {
                    for (j, &pos) in self.ldr_positions.iter().enumerate() {
                        let Some(r) = rows.iter().position(|&h| h == pos) else {
                            continue;
                        };
                        let a = &e[(p * rk + j) * n..(p * rk + j + 1) * n];
                        let src = &self.ldr_src[j];
                        yo[r] += a.iter().zip(src).map(|(&av, &s)| av * xi[s as usize]).sum::<f64>();
                    }
                }
            }
        }
        y
    }

    /// Gradients for an upstream gradient given on `rows`.
    fn backward_rows(&self, x: &Signal, dy: &Signal, rows: &[ElemId]) -> LayerGrads {
        let n = self.group.order();
        let nk = self.support.len();
        let nw = self.weight_count();
        let w = self.weights();
        let e = self.error_params();
        let mut dparams = vec![0.0; self.params.len()];
        let mut dx = zeros(self.in_ch, n);
        for (o, dyo) in dy.iter().enumerate() {
            for (i, xi) in x.iter().enumerate() {
                let p = self.pair(o, i);
                let dxi = &mut dx[i];
                for (si, gather) in self.gathers.iter().enumerate() {
                    let c = w[p * nk + si];
                    let mut dw = 0.0;
                    match self.error {
                        ErrorSpec::Full => {
                            let base = (p * nk + si) * n;
                            for (r, &h) in rows.iter().enumerate() {
                                let src = gather[h] as usize;
                                let g = dyo[r] * xi[src];
                                dw += g;
                                dparams[nw + base + h] += g;
                                dxi[src] += (c + e[base + h]) * dyo[r];
                            }
                        }
                        _ => {
                            for (r, &h) in rows.iter().enumerate() {
                                let src = gather[h] as usize;
                                dw += dyo[r] * xi[src];
                                dxi[src] += c * dyo[r];
                            }
                        }
                    }
                    dparams[p * nk + si] += dw;
                }
                if let ErrorSpec::Ldr(rk) = self.error {
                    for (j, &pos) in self.ldr_positions.iter().enumerate() {
                        let Some(r) = rows.iter().position(|&h| h == pos) else {
                            continue;
                        };
                        let base = (p * rk + j) * n;
                        for (g, &s) in self.ldr_src[j].iter().enumerate() {
                            let s = s as usize;
                            dparams[nw + base + g] += dyo[r] * xi[s];
                            dxi[s] += e[base + g] * dyo[r];
                        }
                    }
                }
            }
        }
        LayerGrads { dparams, dx }
    }
}

impl Layer for GMConvLayer {
    fn kind(&self) -> &'static str {
        "conv"
    }
    fn as_gconv(&self) -> Option<&GMConvLayer> {
        Some(self)
    }

    fn in_shape(&self) -> (usize, usize) {
        (self.in_ch, self.group.order())
    }

    fn out_shape(&self) -> (usize, usize) {
        (self.out_ch, self.group.order())
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &Signal) -> Result<Signal> {
        check_shape("conv", "input", x, self.in_shape())?;
        Ok(self.forward_rows(x, None))
    }

    fn backward(&self, x: &Signal, dy: &Signal) -> Result<LayerGrads> {
        check_shape("conv", "input", x, self.in_shape())?;
        check_shape("conv", "gradient", dy, self.out_shape())?;
        let rows: Vec<ElemId> = (0..self.group.order()).collect();
        Ok(self.backward_rows(x, dy, &rows))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Mean,
}

/// `Pool(ψ)(h) = □{ψ(g) : g ∈ P_h}`; output indexed by the subgroup's local ids.
#[derive(Debug, Clone)]
pub struct GMPoolLayer {
    partition: CosetPartition,
    mode: PoolMode,
    channels: usize,
}

impl GMPoolLayer {
    pub fn new(subgroup: &Subgroup, mode: PoolMode, channels: usize) -> Self {
        GMPoolLayer {
            partition: CosetPartition::right_cosets(subgroup),
            mode,
            channels,
        }
    }

    pub fn partition(&self) -> &CosetPartition {
        &self.partition
    }

    pub fn mode(&self) -> PoolMode {
        self.mode
    }

    /// Output group: the subgroup over its local ids.
    pub fn output_group(&self) -> &Arc<FiniteGroup> {
        self.partition.subgroup().as_group()
    }

    /// Block member chosen by max pooling; ties go to the smallest id.
    fn argmax(block: &[ElemId], x: &[f64]) -> ElemId {
        let mut best = block[0];
        for &g in &block[1..] {
            if x[g] > x[best] || (x[g] == x[best] && g < best) {
                best = g;
            }
        }
        best
    }
}

impl Layer for GMPoolLayer {
    fn kind(&self) -> &'static str {
        "pool"
    }

    fn in_shape(&self) -> (usize, usize) {
        (self.channels, self.partition.subgroup().parent().order())
    }

    fn out_shape(&self) -> (usize, usize) {
        (self.channels, self.partition.subgroup().order())
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    fn forward(&self, x: &Signal) -> Result<Signal> {
        check_shape("pool", "input", x, self.in_shape())?;
        Ok(x.iter()
            .map(|xc| {
                self.partition
                    .partitions()
                    .iter()
                    .map(|block| match self.mode {
                        PoolMode::Mean => block.iter().map(|&g| xc[g]).sum::<f64>() / block.len() as f64,
                        PoolMode::Max => xc[Self::argmax(block, xc)],
                    })
                    .collect()
            })
            .collect())
    }

    fn backward(&self, x: &Signal, dy: &Signal) -> Result<LayerGrads> {
        check_shape("pool", "input", x, self.in_shape())?;
        check_shape("pool", "gradient", dy, self.out_shape())?;
        let (c, n) = self.in_shape();
        let mut dx = zeros(c, n);
        for ((dxc, xc), dyc) in dx.iter_mut().zip(x).zip(dy) {
            for (block, &d) in self.partition.partitions().iter().zip(dyc) {
                match self.mode {
                    PoolMode::Mean => {
                        let share = d / block.len() as f64;
                        for &g in block {
                            dxc[g] += share;
                        }
                    }
                    PoolMode::Max => dxc[Self::argmax(block, xc)] += d,
                }
            }
        }
        Ok(LayerGrads { dparams: Vec::new(), dx })
    }
}

/// Convolution evaluated only on the rows of a subgroup H, i.e. with the
/// row-pruned diagonals B_g^H. Output is indexed by H's local ids.
#[derive(Debug, Clone)]
pub struct StrideLayer {
    subgroup: Subgroup,
    conv: GMConvLayer,
}

impl StrideLayer {
    pub fn new(subgroup: &Subgroup, conv: GMConvLayer) -> Result<Self> {
        if **subgroup.parent() != **conv.group() {
            return Err(Error::GroupMismatch);
        }
        Ok(StrideLayer {
            subgroup: subgroup.clone(),
            conv,
        })
    }

    pub fn conv(&self) -> &GMConvLayer {
        &self.conv
    }

    pub fn subgroup(&self) -> &Subgroup {
        &self.subgroup
    }

    pub fn output_group(&self) -> &Arc<FiniteGroup> {
        self.subgroup.as_group()
    }
}

impl Layer for StrideLayer {
    fn kind(&self) -> &'static str {
        "stride"
    }
    fn as_gconv(&self) -> Option<&GMConvLayer> {
        Some(&self.conv)
    }

    fn in_shape(&self) -> (usize, usize) {
        self.conv.in_shape()
    }

    fn out_shape(&self) -> (usize, usize) {
        (self.conv.out_ch, self.subgroup.order())
    }

    fn params(&self) -> &[f64] {
        &self.conv.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.conv.params
    }

    fn forward(&self, x: &Signal) -> Result<Signal> {
        check_shape("stride", "input", x, self.in_shape())?;
        Ok(self.conv.forward_rows(x, Some(self.subgroup.members())))
    }

    fn backward(&self, x: &Signal, dy: &Signal) -> Result<LayerGrads> {
        check_shape("stride", "input", x, self.in_shape())?;
        check_shape("stride", "gradient", dy, self.out_shape())?;
        Ok(self.conv.backward_rows(x, dy, self.subgroup.members()))
    }
}

/// PReLU with one slope per channel.
#[derive(Debug, Clone)]
pub struct PRelu {
    channels: usize,
    len: usize,
    slopes: Vec<f64>,
}

impl PRelu {
    pub fn new(channels: usize, len: usize) -> Self {
        PRelu {
            channels,
            len,
            slopes: vec![0.25; channels],
        }
    }
}

impl Layer for PRelu {
    fn kind(&self) -> &'static str {
        "prelu"
    }

    fn in_shape(&self) -> (usize, usize) {
        (self.channels, self.len)
    }

    fn out_shape(&self) -> (usize, usize) {
        (self.channels, self.len)
    }

    fn params(&self) -> &[f64] {
        &self.slopes
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.slopes
    }

    fn forward(&self, x: &Signal) -> Result<Signal> {
        check_shape("prelu", "input", x, self.in_shape())?;
        Ok(x.iter()
            .zip(&self.slopes)
            .map(|(xc, &a)| xc.iter().map(|&v| if v > 0.0 { v } else { a * v }).collect())
            .collect())
    }

    fn backward(&self, x: &Signal, dy: &Signal) -> Result<LayerGrads> {
        check_shape("prelu", "input", x, self.in_shape())?;
        check_shape("prelu", "gradient", dy, self.out_shape())?;
        let mut dparams = vec![0.0; self.channels];
        let dx = x
            .iter()
            .zip(dy)
            .zip(&self.slopes)
            .enumerate()
            .map(|(c, ((xc, dyc), &a))| {
                xc.iter()
                    .zip(dyc)
                    .map(|(&v, &d)| {
                        if v > 0.0 {
                            d
                        } else {
                            dparams[c] += d * v;
                            a * d
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(LayerGrads { dparams, dx })
    }
}

/// Fully connected readout: flattens `[channel][index]` and returns one
/// length-1 channel per output. Parameters: `W` row-major, then bias.
#[derive(Debug, Clone)]
pub struct DenseReadout {
    in_shape: (usize, usize),
    outputs: usize,
    params: Vec<f64>,
}

impl DenseReadout {
    pub fn new(in_shape: (usize, usize), outputs: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_shape.0 * in_shape.1;
        let mut params = kaiming(rng, outputs * fan_in, fan_in);
        params.extend(std::iter::repeat_n(0.0, outputs));
        DenseReadout {
            in_shape,
            outputs,
            params,
        }
    }
}

impl Layer for DenseReadout {
    fn kind(&self) -> &'static str {
        "readout"
    }

    fn in_shape(&self) -> (usize, usize) {
        self.in_shape
    }

    fn out_shape(&self) -> (usize, usize) {
        (self.outputs, 1)
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &Signal) -> Result<Signal> {
        check_shape("readout", "input", x, self.in_shape)?;
        let fan_in = self.in_shape.0 * self.in_shape.1;
        let flat: Vec<f64> = x.concat();
        Ok((0..self.outputs)
            .map(|o| {
                let row = &self.params[o * fan_in..(o + 1) * fan_in];
                let b = self.params[self.outputs * fan_in + o];
                vec![row.iter().zip(&flat).map(|(w, v)| w * v).sum::<f64>() + b]
            })
            .collect())
    }

    fn backward(&self, x: &Signal, dy: &Signal) -> Result<LayerGrads> {
        check_shape("readout", "input", x, self.in_shape)?;
        check_shape("readout", "gradient", dy, self.out_shape())?;
        let (c, n) = self.in_shape;
        let fan_in = c * n;
        let flat: Vec<f64> = x.concat();
        let mut dparams = vec![0.0; self.params.len()];
        let mut dflat = vec![0.0; fan_in];
        for (o, d) in dy.iter().map(|v| v[0]).enumerate() {
            let row = &self.params[o * fan_in..(o + 1) * fan_in];
            for j in 0..fan_in {
                dparams[o * fan_in + j] += d * flat[j];
                dflat[j] += d * row[j];
            }
            dparams[self.outputs * fan_in + o] += d;
        }
        let dx = dflat.chunks(n).map(<[f64]>::to_vec).collect();
        Ok(LayerGrads { dparams, dx })
    }
}

/// A finitely generated group with canonical-form elements, enough to build
/// finite windows and word balls.
pub trait Lattice: Send + Sync + Debug {
    type Elem: Copy + Ord + Hash + Debug + Send + Sync;
    fn identity(&self) -> Self::Elem;
    fn mul(&self, a: Self::Elem, b: Self::Elem) -> Self::Elem;
    fn inv(&self, a: Self::Elem) -> Self::Elem;
    /// Symmetric generating set.
    fn generators(&self) -> Vec<Self::Elem>;

    /// Word ball of radius k, sorted.
    fn ball(&self, k: usize) -> Vec<Self::Elem> {
        let mut dist = HashMap::from([(self.identity(), 0usize)]);
        let mut queue = VecDeque::from([self.identity()]);
        let gens = self.generators();
        while let Some(x) = queue.pop_front() {
            let d = dist[&x];
            if d == k {
                continue;
            }
            for &s in &gens {
                let y = self.mul(x, s);
                if let Entry::Vacant(e) = dist.entry(y) {
                    e.insert(d + 1);
                    queue.push_back(y);
                }
            }
        }
        let mut out: Vec<_> = dist.into_keys().collect();
        out.sort();
        out
    }
}

/// The integers with generators ±1.
#[derive(Debug, Clone, Copy, Default)]
pub struct IntLattice;

impl Lattice for IntLattice {
    type Elem = i64;

    fn identity(&self) -> i64 {
        0
    }

    fn mul(&self, a: i64, b: i64) -> i64 {
        a + b
    }

    fn inv(&self, a: i64) -> i64 {
        -a
    }

    fn generators(&self) -> Vec<i64> {
        vec![-1, 1]
    }
}

/// Z×Z with the product generating set (all eight neighbours), so the
/// radius-k ball is the (2k+1)×(2k+1) square.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlaneLattice;

impl Lattice for PlaneLattice {
    type Elem = (i64, i64);

    fn identity(&self) -> (i64, i64) {
        (0, 0)
    }

    fn mul(&self, a: (i64, i64), b: (i64, i64)) -> (i64, i64) {
        (a.0 + b.0, a.1 + b.1)
    }

    fn inv(&self, a: (i64, i64)) -> (i64, i64) {
        (-a.0, -a.1)
    }

    fn generators(&self) -> Vec<(i64, i64)> {
        let mut g = Vec::new();
        for a in -1..=1 {
            for b in -1..=1 {
                if (a, b) != (0, 0) {
                    g.push((a, b));
                }
            }
        }
        g
    }
}

/// A finite group seen as a lattice, for windows that are subsets of it.
#[derive(Debug, Clone)]
pub struct FiniteLattice(pub Arc<FiniteGroup>);

impl Lattice for FiniteLattice {
    type Elem = ElemId;

    fn identity(&self) -> ElemId {
        self.0.identity()
    }

    fn mul(&self, a: ElemId, b: ElemId) -> ElemId {
        self.0.mul(a, b)
    }

    fn inv(&self, a: ElemId) -> ElemId {
        self.0.inv(a)
    }

    fn generators(&self) -> Vec<ElemId> {
        self.0.generators().to_vec()
    }
}

/// Input window X_in, symmetric kernel set N and the padded window
/// `(X_in)_N = {b⁻¹a : a ∈ X_in, b ∈ N}`.
#[derive(Debug, Clone)]
pub struct PaddedWindow<L: Lattice> {
    lattice: L,
    x_in: Vec<L::Elem>,
    kernel_set: Vec<L::Elem>,
    padded: Vec<L::Elem>,
    boundary: Vec<L::Elem>,
    padded_index: HashMap<L::Elem, usize>,
    in_index: HashMap<L::Elem, usize>,
}

impl<L: Lattice> PaddedWindow<L> {
    pub fn new(lattice: L, x_in: &[L::Elem], kernel_set: &[L::Elem]) -> Result<Self> {
        let mut x_in = x_in.to_vec();
        x_in.sort();
        x_in.dedup();
        let mut kernel_set = kernel_set.to_vec();
        kernel_set.sort();
        kernel_set.dedup();
        if x_in.is_empty() || kernel_set.is_empty() {
            return Err(Error::Config("window and kernel set must be non-empty".into()));
        }
        if let Some(g) = kernel_set.iter().find(|&&g| kernel_set.binary_search(&lattice.inv(g)).is_err()) {
            return Err(Error::KernelSupport(format!("{g:?} (kernel set is not symmetric)")));
        }
        let mut padded: Vec<L::Elem> = x_in
            .iter()
            .flat_map(|&a| kernel_set.iter().map(move |&b| (a, b)))
            .map(|(a, b)| lattice.mul(lattice.inv(b), a))
            .collect();
        padded.sort();
        padded.dedup();
        let boundary = padded.iter().copied().filter(|p| x_in.binary_search(p).is_err()).collect();
        let padded_index = padded.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let in_index = x_in.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        Ok(PaddedWindow {
            lattice,
            x_in,
            kernel_set,
            padded,
            boundary,
            padded_index,
            in_index,
        })
    }

    pub fn lattice(&self) -> &L {
        &self.lattice
    }

    pub fn x_in(&self) -> &[L::Elem] {
        &self.x_in
    }

    pub fn kernel_set(&self) -> &[L::Elem] {
        &self.kernel_set
    }

    pub fn padded(&self) -> &[L::Elem] {
        &self.padded
    }

    pub fn boundary(&self) -> &[L::Elem] {
        &self.boundary
    }

    pub fn in_position(&self, x: L::Elem) -> Option<usize> {
        self.in_index.get(&x).copied()
    }

    /// `Pad(ψ)`: zero extension from X_in to the padded window.
    pub fn pad(&self, psi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.padded.len()];
        for (x, &v) in self.x_in.iter().zip(psi) {
            out[self.padded_index[x]] = v;
        }
        out
    }

    /// `src[j][i]`: position in X_in of `g_j⁻¹ x_i`, if inside.
    fn sources(&self) -> Vec<Vec<Option<usize>>> {
        let l = &self.lattice;
        self.kernel_set
            .iter()
            .map(|&g| {
                let gi = l.inv(g);
                self.x_in.iter().map(|&x| self.in_position(l.mul(gi, x))).collect()
            })
            .collect()
    }

    /// Dense M̃ = E Eᵀ Σ_g φ(g) B_g over the padded window.
    pub fn padded_matrix(&self, phi: &[f64]) -> Dense {
        let l = &self.lattice;
        let n = self.padded.len();
        let mut m = Dense::zeros(n, n);
        for (&g, &c) in self.kernel_set.iter().zip(phi) {
            let gi = l.inv(g);
            for &x in &self.x_in {
                if let Some(&col) = self.padded_index.get(&l.mul(gi, x)) {
                    m[(self.padded_index[&x], col)] += c;
                }
            }
        }
        m
    }

    /// F̃ with rows g ∈ N and columns x in the padded window:
    /// `F̃_g[x] = M̃[x, g⁻¹x]`, zero when g⁻¹x leaves the window.
    pub fn padded_form(&self, m: &Dense) -> Dense {
        let l = &self.lattice;
        Dense::from_fn(self.kernel_set.len(), self.padded.len(), |j, xi| {
            let x = self.padded[xi];
            let y = l.mul(l.inv(self.kernel_set[j]), x);
            self.padded_index.get(&y).map_or(0.0, |&c| m[(xi, c)])
        })
    }
}

/// Bounds `|∂X|·|N|`, `|∂X|` and the measured dim_D and DR of the padded class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PaddingBound {
    pub dim_bound: usize,
    pub rank_bound: usize,
    pub measured_dim: usize,
    pub measured_rank: usize,
}

impl PaddingBound {
    pub fn holds(&self) -> bool {
        self.measured_dim <= self.dim_bound && self.measured_rank <= self.rank_bound
    }
}

/// Measures the displacement of `{M̃(φ)}` over free kernels φ on N: the
/// dimension from the basis kernels, the rank as the maximum over the basis
/// and `samples` random kernels.
pub fn padded_conv_displacement_bound<L: Lattice>(
    window: &PaddedWindow<L>,
    samples: usize,
    rng: &mut impl Rng,
) -> PaddingBound {
    let nn = window.kernel_set.len();
    let residual = |phi: &[f64]| row_cycle_difference(&window.padded_form(&window.padded_matrix(phi)));
    let basis: Vec<Dense> = (0..nn)
        .map(|j| {
            let mut phi = vec![0.0; nn];
            phi[j] = 1.0;
            residual(&phi)
        })
        .collect();
    let mut rank = basis.iter().map(|d| numerical_rank(d, RANK_REL_TOL).0).max().unwrap_or(0);
    for _ in 0..samples {
        let phi = crate::sampling::random_vec(rng, nn);
        rank = rank.max(numerical_rank(&residual(&phi), RANK_REL_TOL).0);
    }
    PaddingBound {
        dim_bound: window.boundary.len() * nn,
        rank_bound: window.boundary.len(),
        measured_dim: span_dimension(&basis),
        measured_rank: rank,
    }
}

/// `Conv~_φ ψ = Eᵀ (Σ_{g∈N} φ(g) B_g) E ψ` with multiple channels; weights
/// `[o][i][j]` over the sorted kernel set.
#[derive(Debug, Clone)]
pub struct PaddedConvLayer<L: Lattice> {
    window: PaddedWindow<L>,
    in_ch: usize,
    out_ch: usize,
    params: Vec<f64>,
    sources: Vec<Vec<Option<usize>>>,
}

impl<L: Lattice> PaddedConvLayer<L> {
    pub fn new(window: PaddedWindow<L>, in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        let nn = window.kernel_set.len();
        let params = kaiming(rng, out_ch * in_ch * nn, in_ch * nn);
        let sources = window.sources();
        PaddedConvLayer {
            window,
            in_ch,
            out_ch,
            params,
            sources,
        }
    }

    /// Single-channel layer with kernel `phi` given as (element, value)
    /// pairs; elements must lie in N.
    pub fn with_kernel(window: PaddedWindow<L>, phi: &[(L::Elem, f64)]) -> Result<Self> {
        let mut params = vec![0.0; window.kernel_set.len()];
        for &(g, v) in phi {
            let j = window
                .kernel_set
                .binary_search(&g)
                .map_err(|_| Error::KernelSupport(format!("{g:?}")))?;
            params[j] = v;
        }
        let sources = window.sources();
        Ok(PaddedConvLayer {
            window,
            in_ch: 1,
            out_ch: 1,
            params,
            sources,
        })
    }

    pub fn window(&self) -> &PaddedWindow<L> {
        &self.window
    }
}

impl<L: Lattice> Layer for PaddedConvLayer<L> {
    fn kind(&self) -> &'static str {
        "padded_conv"
    }

    fn in_shape(&self) -> (usize, usize) {
        (self.in_ch, self.window.x_in.len())
    }

    fn out_shape(&self) -> (usize, usize) {
        (self.out_ch, self.window.x_in.len())
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &Signal) -> Result<Signal> {
        check_shape("padded_conv", "input", x, self.in_shape())?;
        let nn = self.sources.len();
        let mut y = zeros(self.out_ch, self.window.x_in.len());
        for (o, yo) in y.iter_mut().enumerate() {
            for (i, xi) in x.iter().enumerate() {
                for (j, src) in self.sources.iter().enumerate() {
                    let c = self.params[(o * self.in_ch + i) * nn + j];
                    for (yv, s) in yo.iter_mut().zip(src) {
                        if let Some(s) = *s {
                            *yv += c * xi[s];
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    fn backward(&self, x: &Signal, dy: &Signal) -> Result<LayerGrads> {
        check_shape("padded_conv", "input", x, self.in_shape())?;
        check_shape("padded_conv", "gradient", dy, self.out_shape())?;
        let nn = self.sources.len();
        let mut dparams = vec![0.0; self.params.len()];
        let mut dx = zeros(self.in_ch, self.window.x_in.len());
        for (o, dyo) in dy.iter().enumerate() {
            for (i, xi) in x.iter().enumerate() {
                for (j, src) in self.sources.iter().enumerate() {
                    let idx = (o * self.in_ch + i) * nn + j;
                    let c = self.params[idx];
                    for (r, s) in src.iter().enumerate() {
                        if let Some(s) = *s {
                            dparams[idx] += dyo[r] * xi[s];
                            dx[i][s] += c * dyo[r];
                        }
                    }
                }
            }
        }
        Ok(LayerGrads { dparams, dx })
    }
}

/// Convolution on X = G/H over fixed representatives:
/// `φ⋆f(x) = Σ_{g, y} φ(g) f(y) (B_{gy} 1_H)(x)`, which reduces to
/// `Σ_g φ(g) f([g⁻¹x])`. Weights `[o][i][s]` over the radius-k ball of G.
#[derive(Debug, Clone)]
pub struct HomSpaceConvLayer {
    space: HomogeneousSpace,
    support: Vec<ElemId>,
    in_ch: usize,
    out_ch: usize,
    params: Vec<f64>,
    /// `sources[s][x]`: index of the representative of `s⁻¹x H`.
    sources: Vec<Vec<u32>>,
}

impl HomSpaceConvLayer {
    pub fn new(space: &HomogeneousSpace, k: usize, in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        let mut layer = Self::zeroed(space, k, in_ch, out_ch);
        let nk = layer.support.len();
        layer.params = kaiming(rng, out_ch * in_ch * nk, in_ch * nk);
        layer
    }

    pub fn zeroed(space: &HomogeneousSpace, k: usize, in_ch: usize, out_ch: usize) -> Self {
        let g = space.group();
        let support = g.word_ball(k);
        let sources = support
            .iter()
            .map(|&s| {
                let si = g.inv(s);
                space
                    .representatives()
                    .iter()
                    .map(|&x| space.coset_of(g.mul(si, x)) as u32)
                    .collect()
            })
            .collect();
        HomSpaceConvLayer {
            space: space.clone(),
            params: vec![0.0; out_ch * in_ch * support.len()],
            support,
            in_ch,
            out_ch,
            sources,
        }
    }

    pub fn space(&self) -> &HomogeneousSpace {
        &self.space
    }

    pub fn support(&self) -> &[ElemId] {
        &self.support
    }

    pub fn set_kernel(&mut self, o: usize, i: usize, coeffs: &[f64]) {
        let nk = self.support.len();
        let off = (o * self.in_ch + i) * nk;
        self.params[off..off + nk].copy_from_slice(coeffs);
    }
}

impl Layer for HomSpaceConvLayer {
    fn kind(&self) -> &'static str {
        "homspace_conv"
    }

    fn in_shape(&self) -> (usize, usize) {
        (self.in_ch, self.space.len())
    }

    fn out_shape(&self) -> (usize, usize) {
        (self.out_ch, self.space.len())
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &Signal) -> Result<Signal> {
        check_shape("homspace_conv", "input", x, self.in_shape())?;
        let nk = self.support.len();
        let mut y = zeros(self.out_ch, self.space.len());
        for (o, yo) in y.iter_mut().enumerate() {
            for (i, xi) in x.iter().enumerate() {
                for (s, src) in self.sources.iter().enumerate() {
                    let c = self.params[(o * self.in_ch + i) * nk + s];
                    for (yv, &j) in yo.iter_mut().zip(src) {
                        *yv += c * xi[j as usize];
                    }
                }
            }
        }
        Ok(y)
    }

    fn backward(&self, x: &Signal, dy: &Signal) -> Result<LayerGrads> {
        check_shape("homspace_conv", "input", x, self.in_shape())?;
        check_shape("homspace_conv", "gradient", dy, self.out_shape())?;
        let nk = self.support.len();
        let mut dparams = vec![0.0; self.params.len()];
        let mut dx = zeros(self.in_ch, self.space.len());
        for (o, dyo) in dy.iter().enumerate() {
            for (i, xi) in x.iter().enumerate() {
                for (s, src) in self.sources.iter().enumerate() {
                    let idx = (o * self.in_ch + i) * nk + s;
                    for (r, &j) in src.iter().enumerate() {
                        dparams[idx] += dyo[r] * xi[j as usize];
                        dx[i][j as usize] += self.params[idx] * dyo[r];
                    }
                }
            }
        }
        Ok(LayerGrads { dparams, dx })
    }
}

/// A permutation-type action on signal indices: `(g·x)[i] = x[map[i]]`, or 0
/// when `map[i]` is `None` (the source fell outside a finite window).
pub type IndexAction = Vec<Option<usize>>;

pub fn apply_action(action: &IndexAction, x: &Signal) -> Signal {
    x.iter()
        .map(|xc| action.iter().map(|s| s.map_or(0.0, |j| xc[j])).collect())
        .collect()
}

/// `(g·x)(h) = x(hg)`: commutes with every group matrix.
pub fn right_translation_actions(group: &FiniteGroup) -> Vec<IndexAction> {
    (0..group.order())
        .map(|g| (0..group.order()).map(|h| Some(group.mul(h, g))).collect())
        .collect()
}

/// `(g·x)(h) = x(g⁻¹h)`: commutes with group matrices only on abelian groups.
pub fn left_translation_actions(group: &FiniteGroup) -> Vec<IndexAction> {
    (0..group.order())
        .map(|g| (0..group.order()).map(|h| Some(group.mul(group.inv(g), h))).collect())
        .collect()
}

/// Translation by `t` on a window: `(t·ψ)(x) = ψ(t⁻¹x)`, zero when `t⁻¹x ∉ X_in`.
pub fn window_translation<L: Lattice>(window: &PaddedWindow<L>, t: L::Elem) -> IndexAction {
    let l = window.lattice();
    let ti = l.inv(t);
    window.x_in().iter().map(|&x| window.in_position(l.mul(ti, x))).collect()
}

const EQUIV_EPS: f64 = 1e-12;

fn norm(s: &Signal) -> f64 {
    s.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mean over samples and actions of `‖f(g·x) − g·f(x)‖ / max(‖f(g·x)‖, ε)`.
pub fn equivariance_error<F>(map: F, actions: &[IndexAction], samples: &[Signal]) -> Result<f64>
where
    F: Fn(&Signal) -> Result<Signal>,
{
    equivariance_error_with(map, actions, actions, samples)
}

/// As [`equivariance_error`] with separate actions on inputs and outputs.
pub fn equivariance_error_with<F>(
    map: F,
    in_actions: &[IndexAction],
    out_actions: &[IndexAction],
    samples: &[Signal],
) -> Result<f64>
where
    F: Fn(&Signal) -> Result<Signal>,
{
    if in_actions.len() != out_actions.len() {
        return Err(Error::DimensionMismatch("input and output action counts differ".into()));
    }
    if samples.is_empty() || in_actions.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for x in samples {
        let fx = map(x)?;
        for (ain, aout) in in_actions.iter().zip(out_actions) {
            let lhs = map(&apply_action(ain, x))?;
            let rhs = apply_action(aout, &fx);
            let diff: Signal = lhs
                .iter()
                .zip(&rhs)
                .map(|(a, b)| a.iter().zip(b).map(|(u, v)| u - v).collect())
                .collect();
            total += norm(&diff) / norm(&lhs).max(EQUIV_EPS);
        }
    }
    Ok(total / (samples.len() * in_actions.len()) as f64)
}
