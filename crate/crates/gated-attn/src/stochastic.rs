//! Seeded randomness and the Gumbel-Softmax gate relaxation.
//!
//! All randomness in the crate flows through [`SeededRng`]; independent
//! components derive their own streams by tag so that adding a draw in one
//! place never shifts another component's sequence.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{GaError, Result};

const P_CLAMP: f64 = 1e-6;
const U_CLAMP: f64 = 1e-12;

/// ChaCha8 stream with a remembered seed so child streams and checkpoint
/// restore stay cheap.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    rng: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a named component of the pipeline.
    pub fn derive(&self, tag: &str) -> SeededRng {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in tag.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        SeededRng::new(splitmix(self.seed ^ h))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Box-Muller draw.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let u1 = self.uniform().max(U_CLAMP);
        let u2 = self.uniform();
        mean + std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    pub fn gumbel(&mut self) -> f64 {
        gumbel_from_uniform(self.uniform())
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// −log(−log(u)) with u clamped away from {0, 1}.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(U_CLAMP, 1.0 - U_CLAMP);
    -(-u.ln()).ln()
}

pub fn sample_gumbel(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gumbel()).collect(), shape)
}

pub fn sample_bernoulli(p: &Tensor, rng: &mut SeededRng) -> Result<Vec<bool>> {
    let pd = p.data();
    for &v in pd.iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(GaError::contract(format!(
                "bernoulli probability {v} outside [0, 1]"
            )));
        }
    }
    Ok(pd.iter().map(|&v| rng.uniform() < v).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateMode {
    Sample,
    Threshold,
}

impl std::fmt::Display for GateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GateMode::Sample => "sample",
            GateMode::Threshold => "threshold",
        })
    }
}

impl std::str::FromStr for GateMode {
    type Err = GaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(GateMode::Sample),
            "threshold" => Ok(GateMode::Threshold),
            other => Err(GaError::Config(format!(
                "gate mode must be sample or threshold, got {other:?}"
            ))),
        }
    }
}

/// Test-time binary gates.
pub fn hard_gates(p: &Tensor, mode: GateMode, rng: &mut SeededRng) -> Result<Vec<bool>> {
    match mode {
        GateMode::Sample => sample_bernoulli(p, rng),
        GateMode::Threshold => Ok(p.data().iter().map(|&v| v >= 0.5).collect()),
    }
}

/// Noise source for the relaxation: fresh draws in training, pinned values
/// under gradient checking.
pub enum GateDraw<'a> {
    Sample(&'a mut SeededRng),
    Frozen(&'a [f64], &'a [f64]),
}

/// Relaxed gates plus the noise that produced them.
pub struct GateState {
    /// Soft open-gate ĝ per position, on the tape; gradient reaches p.
    pub soft: Tensor,
    pub eps0: Vec<f64>,
    pub eps1: Vec<f64>,
}

/// Two-way Gumbel-Softmax over (closed, open) with probabilities (1−p, p).
///
/// Both logits are perturbed with Gumbel noise, divided by the temperature,
/// shifted by their elementwise max, and exponentiated; the open component is
/// normalized by the pair sum. The shift constants are detached: the softmax
/// value is invariant to them, so the gradient to p is unchanged.
pub fn gumbel_softmax_gate(
    tape: &Tape,
    p: &Tensor,
    tau: f64,
    draw: GateDraw<'_>,
) -> Result<GateState> {
    if tau <= 0.0 {
        return Err(GaError::contract(format!("temperature {tau} must be > 0")));
    }
    let n = p.len();
    let (eps0, eps1): (Vec<f64>, Vec<f64>) = match draw {
        GateDraw::Sample(rng) => (
            (0..n).map(|_| rng.gumbel()).collect(),
            (0..n).map(|_| rng.gumbel()).collect(),
        ),
        GateDraw::Frozen(e0, e1) => {
            assert_eq!(e0.len(), n, "frozen noise length mismatch");
            assert_eq!(e1.len(), n, "frozen noise length mismatch");
            (e0.to_vec(), e1.to_vec())
        }
    };

    let pc = tape.clamp(p, P_CLAMP, 1.0 - P_CLAMP);
    let one_minus = tape.add_scalar(&tape.neg(&pc), 1.0);
    let e1t = Tensor::new(eps1.clone(), p.shape());
    let e0t = Tensor::new(eps0.clone(), p.shape());
    let a1 = tape.mul_scalar(&tape.add(&tape.log(&pc), &e1t), 1.0 / tau);
    let a0 = tape.mul_scalar(&tape.add(&tape.log(&one_minus), &e0t), 1.0 / tau);

    let shift: Vec<f64> = a0
        .data()
        .iter()
        .zip(a1.data().iter())
        .map(|(&x, &y)| x.max(y))
        .collect();
    let shift = Tensor::new(shift, p.shape());
    let z1 = tape.exp(&tape.sub(&a1, &shift));
    let z0 = tape.exp(&tape.sub(&a0, &shift));
    let soft = tape.div(&z1, &tape.add(&z0, &z1));

    Ok(GateState { soft, eps0, eps1 })
}
