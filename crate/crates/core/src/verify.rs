//! Finite-difference verification of every differentiable path.
//!
//! The analytic side always comes from the tape; the numerical side always
//! re-evaluates the pure forward kernels, so the two routes share no code
//! beyond the primitive kernels themselves.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{AttentionKind, sequence_gradients, sequence_loss, LossVariant, ModelMeta, ModelParams, Mode, Objective, TENSOR_NAMES};
use crate::numerics::tape::{record_cell, record_sequence};
use crate::numerics::tensor::dot;
use crate::numerics::{
    affine, cell_forward, extrapolated_gradient, finite_difference_gradient, sequence_forward, sigmoid, temporal_softmax, CellParams, CellVars,
    GradReport, Tape, Tensor2, Var,
};
use crate::rng;
use crate::sequence::{FeatureSequence, Label, LabeledSequence};

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub seeds: usize,
    pub len: usize,
    pub d_feat: usize,
    pub hidden: usize,
    pub eps: f64,
    /// Plain central differences when false.
    pub extrapolate: bool,
    pub tolerance: f64,
    /// Test hook: perturbs the analytic gradient of the named tensor.
    pub corrupt: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            seeds: 20,
            len: 8,
            d_feat: 5,
            hidden: 8,
            eps: crate::numerics::gradcheck::EXTRAPOLATED_EPS,
            extrapolate: true,
            tolerance: crate::numerics::gradcheck::DEFAULT_TOLERANCE,
            corrupt: None,
        }
    }
}

fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

struct Check<'a> {
    config: &'a GradcheckConfig,
    reports: Vec<GradReport>,
}

impl Check<'_> {
    fn compare(&mut self, case: &str, tensor: &str, analytic: &Tensor2, base: &Tensor2, f: impl Fn(&Tensor2) -> f64) -> Result<()> {
        let mut analytic = analytic.clone();
        if self.config.corrupt.as_deref() == Some(tensor) {
            let g = &mut analytic.data_mut()[0];
            *g += 1e-3 * (1.0 + g.abs());
        }
        let probe = |p: &[f64]| f(&Tensor2::from_vec(base.rows(), base.cols(), p.to_vec()).expect("same shape"));
        let numeric = if self.config.extrapolate {
            extrapolated_gradient(probe, base.data(), self.config.eps)?
        } else {
            finite_difference_gradient(probe, base.data(), self.config.eps)?
        };
        self.reports.push(GradReport::compare(case, tensor, analytic.data(), &numeric, self.config.eps, self.config.tolerance));
        Ok(())
    }
}

fn check_elementwise(check: &mut Check, rng: &mut ChaCha8Rng, seed_idx: usize) -> Result<()> {
    let n = check.config.len;
    let x0 = random_tensor(n, 1, 2.0, rng);
    let w = random_tensor(n, 1, 1.0, rng);
    type Kernel = fn(&[f64]) -> Vec<f64>;
    let cases: [(&str, Kernel); 3] = [
        ("sigmoid", |x| x.iter().map(|&v| sigmoid(v)).collect()),
        ("tanh", |x| x.iter().map(|v| v.tanh()).collect()),
        ("softmax", |x| temporal_softmax(x).expect("non-empty")),
    ];
    for (name, kernel) in cases {
        let mut tape = Tape::new();
        let xv = tape.leaf(x0.clone());
        let wv = tape.leaf(w.clone());
        let y = match name {
            "sigmoid" => tape.sigmoid(xv)?,
            "tanh" => tape.tanh(xv)?,
            _ => tape.softmax(xv)?,
        };
        let loss = tape.dot(wv, y)?;
        let g = tape.backward(loss)?.wrt(xv)?;
        check.compare(&format!("{name}#{seed_idx}"), "x", &g, &x0, |x| dot(w.data(), &kernel(x.data())))?;
    }
    Ok(())
}

fn check_affine(check: &mut Check, rng: &mut ChaCha8Rng, seed_idx: usize) -> Result<()> {
    let (m, n) = (check.config.hidden, check.config.d_feat);
    let w0 = random_tensor(m, n, 1.0, rng);
    let x0 = random_tensor(n, 1, 1.0, rng);
    let b0 = random_tensor(m, 1, 1.0, rng);
    let c = random_tensor(m, 1, 1.0, rng);
    let mut tape = Tape::new();
    let (w, x, b, cv) = (tape.leaf(w0.clone()), tape.leaf(x0.clone()), tape.leaf(b0.clone()), tape.leaf(c.clone()));
    let z = tape.matvec(w, x)?;
    let z = tape.add(z, b)?;
    let loss = tape.dot(cv, z)?;
    let g = tape.backward(loss)?;
    let eval = |w: &Tensor2, x: &Tensor2, b: &Tensor2| dot(c.data(), &affine(x.data(), w, b.data()).expect("shapes"));
    let case = format!("affine#{seed_idx}");
    check.compare(&case, "W", &g.wrt(w)?, &w0, |t| eval(t, &x0, &b0))?;
    check.compare(&case, "x", &g.wrt(x)?, &x0, |t| eval(&w0, t, &b0))?;
    check.compare(&case, "b", &g.wrt(b)?, &b0, |t| eval(&w0, &x0, t))
}

fn with_cell_tensor(p: &CellParams, k: usize, t: &Tensor2) -> CellParams {
    let mut q = p.clone();
    match k {
        0 => q.input_weights = t.clone(),
        1 => q.recurrent_weights = t.clone(),
        _ => q.biases = t.clone(),
    }
    q
}

const CELL_NAMES: [&str; 3] = ["input_weights", "recurrent_weights", "biases"];

fn check_cell(check: &mut Check, rng: &mut ChaCha8Rng, seed_idx: usize) -> Result<()> {
    let (d, h) = (check.config.d_feat, check.config.hidden);
    let p = CellParams::init(d, h, rng);
    let x0 = random_tensor(d, 1, 1.0, rng);
    let h0 = random_tensor(h, 1, 0.9, rng);
    let c0 = random_tensor(h, 1, 1.0, rng);
    let (wh, wc) = (random_tensor(h, 1, 1.0, rng), random_tensor(h, 1, 1.0, rng));
    let mut tape = Tape::new();
    let cell = CellVars::record(&mut tape, &p);
    let (x, hv, cv) = (tape.leaf(x0.clone()), tape.leaf(h0.clone()), tape.leaf(c0.clone()));
    let (h1, c1) = record_cell(&mut tape, &cell, x, hv, cv)?;
    let (whv, wcv) = (tape.leaf(wh.clone()), tape.leaf(wc.clone()));
    let lh = tape.dot(whv, h1)?;
    let lc = tape.dot(wcv, c1)?;
    let loss = tape.add(lh, lc)?;
    let g = tape.backward(loss)?;
    let eval = |p: &CellParams, x: &Tensor2, hp: &Tensor2, cp: &Tensor2| {
        let (h1, c1) = cell_forward(x.data(), hp.data(), cp.data(), p).expect("shapes");
        dot(wh.data(), &h1) + dot(wc.data(), &c1)
    };
    let case = format!("cell#{seed_idx}");
    let vars = [cell.input_weights, cell.recurrent_weights, cell.biases];
    let tensors = [&p.input_weights, &p.recurrent_weights, &p.biases];
    for k in 0..3 {
        check.compare(&case, CELL_NAMES[k], &g.wrt(vars[k])?, tensors[k], |t| {
            eval(&with_cell_tensor(&p, k, t), &x0, &h0, &c0)
        })?;
    }
    check.compare(&case, "x", &g.wrt(x)?, &x0, |t| eval(&p, t, &h0, &c0))?;
    check.compare(&case, "h_prev", &g.wrt(hv)?, &h0, |t| eval(&p, &x0, t, &c0))?;
    check.compare(&case, "c_prev", &g.wrt(cv)?, &c0, |t| eval(&p, &x0, &h0, t))
}

fn check_sequence(check: &mut Check, rng: &mut ChaCha8Rng, seed_idx: usize) -> Result<()> {
    let (t_len, d, h) = (check.config.len, check.config.d_feat, check.config.hidden);
    let p = CellParams::init(d, h, rng);
    let frames = random_tensor(t_len, d, 1.0, rng);
    let weights = random_tensor(t_len, h, 1.0, rng);
    let mut tape = Tape::new();
    let cell = CellVars::record(&mut tape, &p);
    let xs: Vec<Var> = (0..t_len).map(|t| tape.leaf(Tensor2::column(frames.row(t).to_vec()))).collect();
    let hs = record_sequence(&mut tape, &cell, &xs)?;
    let mut terms = Vec::new();
    for (t, &hv) in hs.iter().enumerate() {
        let w = tape.leaf(Tensor2::column(weights.row(t).to_vec()));
        terms.push(tape.dot(w, hv)?);
    }
    let stacked = tape.stack(&terms)?;
    let loss = tape.sum(stacked)?;
    let g = tape.backward(loss)?;
    let eval = |p: &CellParams, x: &Tensor2| {
        let out = sequence_forward(x, p).expect("shapes");
        (0..t_len).map(|t| dot(weights.row(t), out.row(t))).sum::<f64>()
    };
    let case = format!("sequence#{seed_idx}");
    let vars = [cell.input_weights, cell.recurrent_weights, cell.biases];
    let tensors = [&p.input_weights, &p.recurrent_weights, &p.biases];
    for k in 0..3 {
        check.compare(&case, CELL_NAMES[k], &g.wrt(vars[k])?, tensors[k], |t| eval(&with_cell_tensor(&p, k, t), &frames))?;
    }
    Ok(())
}

fn check_model(check: &mut Check, rng: &mut ChaCha8Rng, seed_idx: usize) -> Result<()> {
    let c = check.config;
    let meta = ModelMeta {
        d_feat: c.d_feat,
        hidden: c.hidden,
        length: c.len,
        mode: Mode::Weak,
        variant: LossVariant::Literal,
        attention: AttentionKind::Learnt,
        action: "gradcheck".into(),
    };
    let params = ModelParams::init(meta, rng.gen())?;
    let features = FeatureSequence::new(random_tensor(c.len, c.d_feat, 1.0, rng))?;
    let label = if seed_idx.is_multiple_of(2) { Label::Complete } else { Label::Incomplete };
    let tau = (label == Label::Complete).then(|| rng.gen_range(1..=c.len));
    let seq = LabeledSequence::new(format!("g{seed_idx}"), "gradcheck", label, tau, features)?;
    let objectives = [
        ("weak-literal", Objective::Weak(LossVariant::Literal)),
        ("weak-log", Objective::Weak(LossVariant::Log)),
        ("supervised", Objective::Supervised),
    ];
    for (name, objective) in objectives {
        let (_, grads) = sequence_gradients(&params, &seq, objective)?;
        let case = format!("{name}#{seed_idx}");
        for (k, g) in grads.iter().enumerate() {
            let base = params.tensors()[k].1.clone();
            check.compare(&case, TENSOR_NAMES[k], g, &base, |t| {
                let mut probe = params.clone();
                *probe.tensors_mut()[k] = t.clone();
                sequence_loss(&probe, &seq, objective).expect("forward")
            })?;
        }
    }
    Ok(())
}

/// Runs every check on `config.seeds` random instances.
pub fn run_gradcheck(config: &GradcheckConfig) -> Result<Vec<GradReport>> {
    let mut check = Check {
        config,
        reports: Vec::new(),
    };
    for i in 0..config.seeds {
        let mut r = rng::stream(config.seed, &format!("gradcheck/{i}"));
        check_elementwise(&mut check, &mut r, i)?;
        check_affine(&mut check, &mut r, i)?;
        check_cell(&mut check, &mut r, i)?;
        check_sequence(&mut check, &mut r, i)?;
        check_model(&mut check, &mut r, i)?;
    }
    Ok(check.reports)
}

/// Worst report per (case family, tensor), in first-seen order.
pub fn summarize(reports: &[GradReport]) -> Vec<GradReport> {
    let mut out: Vec<GradReport> = Vec::new();
    for r in reports {
        let family = r.case.split('#').next().unwrap_or(&r.case).to_string();
        match out.iter_mut().find(|o| o.case == family && o.tensor == r.tensor) {
            Some(o) => {
                if r.max_rel_error > o.max_rel_error {
                    o.max_rel_error = r.max_rel_error;
                }
                o.pass &= r.pass;
            }
            None => out.push(GradReport { case: family, ..r.clone() }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let reports = run_gradcheck(&GradcheckConfig { seeds: 2, ..Default::default() }).unwrap();
        let failed: Vec<_> = reports.iter().filter(|r| !r.pass).collect();
        assert!(failed.is_empty(), "{failed:#?}");
        let s = summarize(&reports);
        assert!(s.iter().any(|r| r.case == "supervised" && r.tensor == "score.recurrent_weights"));
    }

    #[test]
    fn corruption_is_detected_by_name() {
        let config = GradcheckConfig {
            seeds: 1,
            corrupt: Some("attention.recurrent_weights".into()),
            ..Default::default()
        };
        let reports = run_gradcheck(&config).unwrap();
        let failed: Vec<_> = reports.iter().filter(|r| !r.pass).collect();
        assert!(!failed.is_empty());
        assert!(failed.iter().all(|r| r.tensor == "attention.recurrent_weights"));
    }

    #[test]
    fn unreachable_tolerance_fails() {
        let config = GradcheckConfig { seeds: 1, tolerance: 1e-12, ..Default::default() };
        assert!(run_gradcheck(&config).unwrap().iter().any(|r| !r.pass));
    }
}
