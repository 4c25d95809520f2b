//! In-process simulation of the star network: a power-law row partition, the
//! two-stage disPCA protocol (exact, or sketched with randomized SVD), and a
//! word-exact transcript of every message.

use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::Pareto;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::linalg::{complete_basis, project, svd_right, Matrix, RightFactors, Subspace};
use crate::par;
use crate::rng::{derive_seed, rng_from_seed};
use crate::rsvd::{randomized_svd, RsvdParams};
use crate::sketching::{apply_countsketch_compact, boost_embedding_with, plan_countsketch, BoostConfig};

/// The global data split row-wise across `s` nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedDataset {
    blocks: Vec<Matrix>,
    dim_d: usize,
    /// `origin[g] = (node, local row)` for global row `g`.
    origin: Vec<(usize, usize)>,
    partition_seed: Option<u64>,
}

impl PartitionedDataset {
    /// Wraps explicit blocks; global rows are numbered in node order.
    pub fn from_blocks(blocks: Vec<Matrix>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return param_err("a partition needs at least one block");
        };
        let d = first.cols();
        if let Some(b) = blocks.iter().find(|b| b.cols() != d) {
            return Err(Error::DimensionMismatch {
                op: "from_blocks",
                left: first.shape(),
                right: b.shape(),
            });
        }
        let origin = blocks
            .iter()
            .enumerate()
            .flat_map(|(node, b)| (0..b.rows()).map(move |r| (node, r)))
            .collect();
        Ok(Self {
            blocks,
            dim_d: d,
            origin,
            partition_seed: None,
        })
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn num_nodes(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.dim_d
    }

    pub fn total_rows(&self) -> usize {
        self.origin.len()
    }

    pub fn origin(&self) -> &[(usize, usize)] {
        &self.origin
    }

    pub fn partition_seed(&self) -> Option<u64> {
        self.partition_seed
    }

    /// Block row counts `n_i`.
    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Matrix::rows).collect()
    }

    /// Blocks stacked in node order.
    pub fn stacked(&self) -> Matrix {
        Matrix::vstack(&self.blocks).expect("blocks share d")
    }

    /// The original matrix, rows restored to their global order.
    pub fn reconstruct(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.total_rows() * self.dim_d);
        for &(node, r) in &self.origin {
            data.extend_from_slice(self.blocks[node].row(r));
        }
        Matrix::from_vec(self.total_rows(), self.dim_d, data).expect("non-empty partition")
    }

    fn with_blocks(&self, blocks: Vec<Matrix>) -> Self {
        Self {
            dim_d: blocks[0].cols(),
            blocks,
            origin: self.origin.clone(),
            partition_seed: self.partition_seed,
        }
    }
}

/// Splits rows of `p` over `s` nodes. Node weights are drawn from a power
/// law with exponent `alpha` (density `∝ w^{-alpha}` on `[1, ∞)`), then each
/// row picks a node with probability proportional to its weight. Empty nodes
/// take one row from the currently largest node.
pub fn partition_powerlaw(p: &Matrix, s: usize, alpha: f64, seed: u64) -> Result<PartitionedDataset> {
    if s == 0 {
        return param_err("need at least one node");
    }
    if p.rows() < s {
        return param_err(format!("{} rows cannot fill {s} nodes", p.rows()));
    }
    if !(alpha > 1.0 && alpha.is_finite()) {
        return param_err(format!("power-law exponent {alpha} must exceed 1"));
    }
    let mut rng = rng_from_seed(seed);
    let pareto = Pareto::new(1.0, alpha - 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let weights: Vec<f64> = (0..s).map(|_| pareto.sample(&mut rng)).collect();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); s];
    for g in 0..p.rows() {
        members[pick.sample(&mut rng)].push(g);
    }
    while let Some(empty) = members.iter().position(Vec::is_empty) {
        let largest = (0..s)
            .max_by_key(|&i| (members[i].len(), std::cmp::Reverse(i)))
            .expect("s >= 1");
        let moved = members[largest].pop().expect("largest block has >= 2 rows");
        members[empty].push(moved);
    }
    let mut origin = vec![(0, 0); p.rows()];
    let blocks = members
        .iter()
        .enumerate()
        .map(|(node, rows)| {
            for (local, &g) in rows.iter().enumerate() {
                origin[g] = (node, local);
            }
            p.select_rows(rows)
        })
        .collect();
    Ok(PartitionedDataset {
        blocks,
        dim_d: p.cols(),
        origin,
        partition_seed: Some(seed),
    })
}

/// `P_i E Eᵀ` for every block.
pub fn projected_dataset(data: &PartitionedDataset, sub: &Subspace) -> Result<PartitionedDataset> {
    let blocks = data
        .blocks
        .iter()
        .map(|b| project(b, sub))
        .collect::<Result<Vec<_>>>()?;
    Ok(data.with_blocks(blocks))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Exact SVD at nodes and coordinator.
    Exact,
    /// Randomized SVD (`rsvd_q` power iterations) at nodes and coordinator.
    Randomized,
}

/// Per-node CountSketch settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SketchParams {
    /// Sketch rows `ℓ` of the unboosted embedding. Boosted candidates are
    /// sized for accuracy `eps/9` instead, as the agreement test requires.
    pub ell: usize,
    /// Target embedding accuracy (used by the booster).
    pub eps: f64,
    /// Overall failure probability `δ`. Each node boosts with `δ/2s`.
    /// `None` uses one unboosted sketch per node.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisPcaParams {
    pub t1: usize,
    pub t2: usize,
    pub backend: Backend,
    pub sketch: Option<SketchParams>,
    pub rsvd_q: usize,
    pub seed: u64,
    /// Account for sending `V^(t2)` back to every node.
    pub broadcast: bool,
}

impl DisPcaParams {
    /// Exact backend, no sketch, no broadcast.
    pub fn exact(t1: usize, t2: usize, seed: u64) -> Self {
        Self {
            t1,
            t2,
            backend: Backend::Exact,
            sketch: None,
            rsvd_q: 0,
            seed,
            broadcast: false,
        }
    }

    /// Sketched nodes and randomized SVD throughout.
    pub fn fast(t1: usize, t2: usize, sketch: SketchParams, rsvd_q: usize, seed: u64) -> Self {
        Self {
            t1,
            t2,
            backend: Backend::Randomized,
            sketch: Some(sketch),
            rsvd_q,
            seed,
            broadcast: false,
        }
    }

    pub fn with_broadcast(mut self, on: bool) -> Self {
        self.broadcast = on;
        self
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(1 <= self.t2 && self.t2 <= self.t1 && self.t1 <= d) {
            return param_err(format!(
                "need 1 <= t2 <= t1 <= d, got t1 = {}, t2 = {}, d = {d}",
                self.t1, self.t2
            ));
        }
        if let Some(sk) = &self.sketch {
            if sk.ell == 0 {
                return param_err("sketch size must be positive");
            }
            if let Some(delta) = sk.delta {
                if !(delta > 0.0 && delta < 1.0) {
                    return param_err(format!("delta {delta} outside (0, 1)"));
                }
                if !(sk.eps > 0.0 && sk.eps <= 0.5) {
                    return param_err(format!("sketch eps {} outside (0, 1/2]", sk.eps));
                }
            }
        }
        Ok(())
    }
}

/// Node 0 is the coordinator, nodes `1..=s` hold the blocks.
pub type NodeId = usize;

pub const COORDINATOR: NodeId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    LocalFactors,
    GlobalSubspace,
    CoresetPoints,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: MessageKind,
    pub words: u64,
}

/// Ordered message log. One word is one real number.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    messages: Vec<Message>,
}

#[derive(Serialize, Deserialize)]
struct TotalLine {
    total_words: u64,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, from: NodeId, to: NodeId, kind: MessageKind, words: u64) {
        self.messages.push(Message {
            from,
            to,
            kind,
            words,
        });
    }

    pub fn append(&mut self, other: Transcript) {
        self.messages.extend(other.messages);
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn total_words(&self) -> u64 {
        self.messages.iter().map(|m| m.words).sum()
    }

    pub fn words_of(&self, kind: MessageKind) -> u64 {
        self.messages.iter().filter(|m| m.kind == kind).map(|m| m.words).sum()
    }

    /// One JSON object per message, then `{"total_words":N}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for m in &self.messages {
            serde_json::to_writer(&mut w, m)?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(
            &mut w,
            &TotalLine {
                total_words: self.total_words(),
            },
        )?;
        w.write_all(b"\n")
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Parses [`Transcript::write_jsonl`] output and checks the trailing total.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut out = Transcript::new();
        let mut total = None;
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidParameter(format!("line {}: {e}", i + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            if total.is_some() {
                return param_err(format!("line {}: data after total_words", i + 1));
            }
            if let Ok(m) = serde_json::from_str::<Message>(&line) {
                out.messages.push(m);
            } else {
                let t: TotalLine = serde_json::from_str(&line)
                    .map_err(|e| Error::InvalidParameter(format!("line {}: {e}", i + 1)))?;
                total = Some(t.total_words);
            }
        }
        match total {
            Some(t) if t == out.total_words() => Ok(out),
            Some(t) => param_err(format!("total_words {t} does not match sum {}", out.total_words())),
            None => param_err("missing total_words line"),
        }
    }
}

/// `s (t1 d + t1)`, plus `s t2 d` with broadcast.
pub fn expected_words(s: usize, d: usize, t1: usize, t2: usize, broadcast: bool) -> u64 {
    let up = s * (t1 * d + t1);
    let down = if broadcast { s * t2 * d } else { 0 };
    (up + down) as u64
}

/// Words in one local-factors message.
pub fn local_factor_words(d: usize, t1: usize) -> u64 {
    (t1 * d + t1) as u64
}

/// Top-`t` right factors of `a` via the chosen backend, padded with zero
/// singular values and orthonormal complement directions when `a` has fewer
/// than `t` of them.
fn top_right_factors(a: &Matrix, t: usize, backend: Backend, q: usize, seed: u64) -> Result<RightFactors> {
    let m = a.rows().min(a.cols());
    let tr = t.min(m / 2);
    let f = match backend {
        Backend::Randomized if tr >= 1 && 2 * tr >= t => {
            let f = randomized_svd(a, &RsvdParams::new(tr, q, seed))?;
            RightFactors {
                sigma: f.sigma,
                v: f.v,
            }
        }
        _ => svd_right(a)?,
    };
    let keep = t.min(f.sigma.len());
    let mut sigma = f.sigma[..keep].to_vec();
    let mut v = f.v.leading_columns(keep);
    if keep < t {
        sigma.resize(t, 0.0);
        v = complete_basis(&v, t);
    }
    Ok(RightFactors { sigma, v })
}

/// The block a node factors: the block itself, or its (boosted) CountSketch.
fn embed_block(p_i: &Matrix, s: usize, params: &DisPcaParams, seed: u64) -> Result<Matrix> {
    let Some(sk) = params.sketch else {
        return Ok(p_i.clone());
    };
    if p_i.rows() <= p_i.cols() {
        // nothing to compress
        return Ok(p_i.clone());
    }
    match sk.delta {
        None => apply_countsketch_compact(&plan_countsketch(p_i.rows(), sk.ell, seed), p_i),
        Some(delta) => {
            let cfg = BoostConfig {
                eps: sk.eps,
                delta: delta / (2.0 * s as f64),
                ell: None,
                seed,
            };
            Ok(boost_embedding_with(p_i, &cfg)?.embedded)
        }
    }
}

/// Node side of the protocol: (optionally) embed the block, factor it, and
/// send `Σ^(t1)`, `V^(t1)` to the coordinator. `node` is 0-based; `s` is the
/// number of nodes.
pub fn local_stage(
    p_i: &Matrix,
    node: usize,
    s: usize,
    params: &DisPcaParams,
) -> Result<(RightFactors, Transcript)> {
    params.validate(p_i.cols())?;
    let seed = derive_seed(params.seed, node as u64 + 1);
    let block = embed_block(p_i, s, params, derive_seed(seed, 0))?;
    let f = top_right_factors(&block, params.t1, params.backend, params.rsvd_q, derive_seed(seed, 1))?;
    let mut tr = Transcript::new();
    tr.push(node + 1, COORDINATOR, MessageKind::LocalFactors, local_factor_words(p_i.cols(), params.t1));
    Ok((f, tr))
}

/// `Y_i = Σ_i V_iᵀ`, stacked.
pub fn stack_summaries(summaries: &[RightFactors]) -> Result<Matrix> {
    let ys: Vec<Matrix> = summaries.iter().map(|f| f.v.scale_columns(&f.sigma).transpose()).collect();
    Matrix::vstack(&ys)
}

/// Coordinator side: SVD of the stacked `Y` and the span of its top `t2`
/// right singular vectors.
pub fn global_stage(summaries: &[RightFactors], params: &DisPcaParams) -> Result<Subspace> {
    if summaries.is_empty() {
        return param_err("no local summaries");
    }
    let y = stack_summaries(summaries)?;
    params.validate(y.cols())?;
    let f = top_right_factors(&y, params.t2, params.backend, params.rsvd_q, derive_seed(params.seed, 0))?;
    Subspace::new(f.v)
}

#[derive(Debug, Clone)]
pub struct DisPcaResult {
    /// `span V^(t2)`.
    pub subspace: Subspace,
    pub transcript: Transcript,
    /// What each node sent, in node order.
    pub local_summaries: Vec<RightFactors>,
}

/// Runs both stages. Nodes run concurrently; messages are logged in node
/// order.
pub fn dispca(data: &PartitionedDataset, params: &DisPcaParams) -> Result<DisPcaResult> {
    params.validate(data.dim())?;
    let s = data.num_nodes();
    let locals = par::map_slice(data.blocks(), |i, b| local_stage(b, i, s, params));
    let mut transcript = Transcript::new();
    let mut summaries = Vec::with_capacity(s);
    for r in locals {
        let (f, t) = r?;
        summaries.push(f);
        transcript.append(t);
    }
    let subspace = global_stage(&summaries, params)?;
    if params.broadcast {
        for i in 0..s {
            transcript.push(COORDINATOR, i + 1, MessageKind::GlobalSubspace, (params.t2 * data.dim()) as u64);
        }
    }
    Ok(DisPcaResult {
        subspace,
        transcript,
        local_summaries: summaries,
    })
}

/// Close-projection quantities for one orthonormal `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloseProjectionReport {
    /// `‖PX − P̃X‖²_F`.
    pub diff_sq: f64,
    /// `‖PX‖²_F − ‖P̃X‖²_F`.
    pub norm_gap: f64,
    /// `d²(P, span X)`.
    pub dist_sq: f64,
    /// `ε · d²(P, span X)`.
    pub bound: f64,
    /// `‖PX‖²_F`.
    pub px_sq: f64,
    /// `‖P‖²_F − ‖P̃‖²_F`.
    pub c0: f64,
    /// Both quantities in `[−1e-8, bound]`.
    pub exact_pass: bool,
    /// `diff_sq ≤ bound + ε‖PX‖²` and `|norm_gap| ≤ bound + 3ε‖PX‖²`.
    pub relaxed_pass: bool,
}

/// Lower tolerance on the two non-negative quantities.
pub const CLOSE_PROJECTION_FLOOR: f64 = -1e-8;

pub fn verify_close_projection(p: &Matrix, p_tilde: &Matrix, x: &Subspace, eps: f64) -> Result<CloseProjectionReport> {
    if p.shape() != p_tilde.shape() {
        return Err(Error::DimensionMismatch {
            op: "verify_close_projection",
            left: p.shape(),
            right: p_tilde.shape(),
        });
    }
    let px = p.matmul(x.basis())?;
    let ptx = p_tilde.matmul(x.basis())?;
    let diff_sq = px.sub(&ptx)?.frobenius_sq();
    let px_sq = px.frobenius_sq();
    let norm_gap = px_sq - ptx.frobenius_sq();
    let dist_sq = (p.frobenius_sq() - px_sq).max(0.0);
    let bound = eps * dist_sq;
    let c0 = p.frobenius_sq() - p_tilde.frobenius_sq();
    let in_band = |v: f64| v >= CLOSE_PROJECTION_FLOOR && v <= bound;
    Ok(CloseProjectionReport {
        diff_sq,
        norm_gap,
        dist_sq,
        bound,
        px_sq,
        c0,
        exact_pass: in_band(diff_sq) && in_band(norm_gap),
        relaxed_pass: diff_sq <= bound + eps * px_sq && norm_gap.abs() <= bound + 3.0 * eps * px_sq,
    })
}
