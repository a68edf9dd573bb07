//! Attention-cost accounting. Only the aggregation stage is counted; the
//! encoder runs in full for every mechanism, so it cancels out of any
//! comparison between them.
//!
//! Convention: a multiply-accumulate is 2 ops, a transcendental call
//! (tanh, exp) is 1 op. Per scored position with state width D and score-MLP
//! hidden width A:
//!   score MLP    2·D·A + A (bias) + A (tanh) + 2·A (v dot)
//!   exp          1
//!   normalize    2 (accumulate + divide)
//!   weighted sum 2·D
//! Local attention adds 9 ops per scored position for the Gaussian damping
//! (offset, square, scale, exp, reweight, second normalize).

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsReport {
    pub score_mlp: u64,
    pub exp: u64,
    pub normalize: u64,
    pub weighted_sum: u64,
    pub gaussian: u64,
    pub total: u64,
    pub positions_scored: u64,
    pub positions_total: u64,
}

pub fn count_attention_flops(
    scored: usize,
    total: usize,
    d: usize,
    a: usize,
    gaussian: bool,
) -> FlopsReport {
    let s = scored as u64;
    let (d, a) = (d as u64, a as u64);
    let score_mlp = s * (2 * d * a + 4 * a);
    let exp = s;
    let normalize = 2 * s;
    let weighted_sum = 2 * d * s;
    let gauss = if gaussian { 9 * s } else { 0 };
    FlopsReport {
        score_mlp,
        exp,
        normalize,
        weighted_sum,
        gaussian: gauss,
        total: score_mlp + exp + normalize + weighted_sum + gauss,
        positions_scored: s,
        positions_total: total as u64,
    }
}

pub fn density(open: usize, valid: usize) -> f64 {
    if valid == 0 {
        0.0
    } else {
        open as f64 / valid as f64
    }
}

/// Precision and recall of open gates against gold rationale positions.
/// Empty denominators yield 0 by convention.
pub fn gate_precision_recall(open: &[bool], gold: &[bool]) -> (f64, f64) {
    assert_eq!(open.len(), gold.len(), "mask lengths must agree");
    let tp = open.iter().zip(gold).filter(|(&o, &g)| o && g).count();
    let opened = open.iter().filter(|&&o| o).count();
    let relevant = gold.iter().filter(|&&g| g).count();
    let precision = if opened == 0 { 0.0 } else { tp as f64 / opened as f64 };
    let recall = if relevant == 0 { 0.0 } else { tp as f64 / relevant as f64 };
    (precision, recall)
}
