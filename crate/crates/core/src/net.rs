//! Two-hidden-layer tanh network over one-hot `(state, action)` features with
//! hand-written reverse and forward-mode derivatives.
//!
//! Parameters live in one flat array, laid out as
//! `W1 (h1 × d) | b1 (h1) | W2 (h2 × h1) | b2 (h2) | w3 (h2) | b3 (1)` with
//! row-major weight matrices and `d = n_states + n_actions`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::demo::StateAction;
use crate::error::{CailError, Result};
use crate::rng::seeded;

pub const DEFAULT_HIDDEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetLayout {
    pub n_states: usize,
    pub n_actions: usize,
    pub hidden: [usize; 2],
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

impl NetLayout {
    pub fn new(n_states: usize, n_actions: usize, hidden: [usize; 2]) -> Self {
        Self {
            n_states,
            n_actions,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.n_states + self.n_actions
    }

    pub fn param_count(&self) -> usize {
        self.offsets().end
    }

    fn offsets(&self) -> Offsets {
        let d = self.input_dim();
        let [h1, h2] = self.hidden;
        let w1 = 0;
        let b1 = w1 + h1 * d;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + h2;
        Offsets {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            end: b3 + 1,
        }
    }
}

/// Flat parameter array tied to a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: NetLayout,
    values: Vec<f64>,
}

/// Gradient in the same flat layout as the parameters it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub values: Vec<f64>,
}

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn dot(&self, other: &GradVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn scale(mut self, factor: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn add_scaled(&mut self, other: &GradVector, factor: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Hidden activations of one forward pass.
struct Trace {
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: f64,
}

impl ParamVector {
    pub fn zeros(layout: NetLayout) -> Self {
        Self {
            layout,
            values: vec![0.0; layout.param_count()],
        }
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]` per layer, biases included.
    pub fn init(layout: NetLayout, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let o = layout.offsets();
        let [h1, h2] = layout.hidden;
        let fans = [
            (o.w1, o.b1, layout.input_dim()),
            (o.b1, o.w2, layout.input_dim()),
            (o.w2, o.b2, h1),
            (o.b2, o.w3, h1),
            (o.w3, o.b3, h2),
            (o.b3, o.end, h2),
        ];
        let mut values = vec![0.0; o.end];
        for (start, end, fan_in) in fans {
            let r = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[start..end] {
                *v = rng.gen_range(-r..=r);
            }
        }
        Self { layout, values }
    }

    pub fn from_values(layout: NetLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.param_count() {
            return Err(CailError::arg(format!(
                "parameter array has {} values, layout needs {}",
                values.len(),
                layout.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CailError::arg("non-finite parameter"));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> NetLayout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self + factor · direction`, as a new vector.
    pub fn offset(&self, direction: &GradVector, factor: f64) -> ParamVector {
        let values = self
            .values
            .iter()
            .zip(&direction.values)
            .map(|(v, d)| v + factor * d)
            .collect();
        ParamVector {
            layout: self.layout,
            values,
        }
    }

    /// Copy with one coordinate shifted.
    pub fn perturbed(&self, index: usize, delta: f64) -> ParamVector {
        let mut out = self.clone();
        out.values[index] += delta;
        out
    }

    pub fn diff(&self, other: &ParamVector) -> GradVector {
        GradVector {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    fn check(&self, sa: StateAction) -> Result<()> {
        if sa.state >= self.layout.n_states {
            return Err(CailError::IndexOutOfRange {
                what: "state",
                index: sa.state,
                bound: self.layout.n_states,
            });
        }
        if sa.action >= self.layout.n_actions {
            return Err(CailError::IndexOutOfRange {
                what: "action",
                index: sa.action,
                bound: self.layout.n_actions,
            });
        }
        Ok(())
    }

    /// Scalar output `f(s, a)`, range-checked.
    pub fn forward(&self, sa: StateAction) -> Result<f64> {
        self.check(sa)?;
        Ok(self.logit(sa))
    }

    /// Unchecked variant of [`ParamVector::forward`] for hot loops over
    /// already-validated data.
    #[inline]
    pub fn logit(&self, sa: StateAction) -> f64 {
        self.trace(sa).out
    }

    fn trace(&self, sa: StateAction) -> Trace {
        let o = self.layout.offsets();
        let d = self.layout.input_dim();
        let [n1, n2] = self.layout.hidden;
        let p = &self.values;
        let col_s = sa.state;
        let col_a = self.layout.n_states + sa.action;
        let h1: Vec<f64> = (0..n1)
            .map(|j| (p[o.w1 + j * d + col_s] + p[o.w1 + j * d + col_a] + p[o.b1 + j]).tanh())
            .collect();
        let h2: Vec<f64> = (0..n2)
            .map(|k| {
                let row = &p[o.w2 + k * n1..o.w2 + (k + 1) * n1];
                (dot(row, &h1) + p[o.b2 + k]).tanh()
            })
            .collect();
        let out = dot(&p[o.w3..o.w3 + n2], &h2) + p[o.b3];
        Trace { h1, h2, out }
    }

    /// Hidden activations for a batch of inputs, one row per input, plus
    /// `W2` as an `n2 × n1` matrix.
    fn hidden_batch(&self, pairs: &[StateAction]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let o = self.layout.offsets();
        let d = self.layout.input_dim();
        let [n1, n2] = self.layout.hidden;
        let p = &self.values;
        let h1 = DMatrix::from_fn(pairs.len(), n1, |i, j| {
            let sa = pairs[i];
            let col_a = self.layout.n_states + sa.action;
            (p[o.w1 + j * d + sa.state] + p[o.w1 + j * d + col_a] + p[o.b1 + j]).tanh()
        });
        let w2 = DMatrix::from_row_slice(n2, n1, &p[o.w2..o.w2 + n2 * n1]);
        let mut h2 = &h1 * w2.transpose();
        for k in 0..n2 {
            let b = p[o.b2 + k];
            h2.column_mut(k).apply(|z| *z = (*z + b).tanh());
        }
        (h1, h2, w2)
    }

    /// `f` at every input, computed as one batch. Indices are not checked.
    pub fn logits(&self, pairs: &[StateAction]) -> Vec<f64> {
        if pairs.is_empty() {
            return Vec::new();
        }
        let o = self.layout.offsets();
        let n2 = self.layout.hidden[1];
        let (_, h2, _) = self.hidden_batch(pairs);
        let w3 = DVector::from_column_slice(&self.values[o.w3..o.w3 + n2]);
        let b3 = self.values[o.b3];
        (h2 * w3).iter().map(|v| v + b3).collect()
    }

    /// [`directional`](Self::directional) for every input, as one batch.
    pub fn directional_batch(&self, pairs: &[StateAction], direction: &GradVector) -> Vec<f64> {
        if pairs.is_empty() {
            return Vec::new();
        }
        let o = self.layout.offsets();
        let d = self.layout.input_dim();
        let [n1, n2] = self.layout.hidden;
        let p = &self.values;
        let t = &direction.values;
        let (h1, h2, w2) = self.hidden_batch(pairs);
        let dh1 = DMatrix::from_fn(pairs.len(), n1, |i, j| {
            let sa = pairs[i];
            let col_a = self.layout.n_states + sa.action;
            let dz1 = t[o.w1 + j * d + sa.state] + t[o.w1 + j * d + col_a] + t[o.b1 + j];
            (1.0 - h1[(i, j)] * h1[(i, j)]) * dz1
        });
        let t2 = DMatrix::from_row_slice(n2, n1, &t[o.w2..o.w2 + n2 * n1]);
        let dz2 = &h1 * t2.transpose() + &dh1 * w2.transpose();
        (0..pairs.len())
            .map(|i| {
                let mut out = t[o.b3];
                for k in 0..n2 {
                    let dh2 = (1.0 - h2[(i, k)] * h2[(i, k)]) * (dz2[(i, k)] + t[o.b2 + k]);
                    out += t[o.w3 + k] * h2[(i, k)] + p[o.w3 + k] * dh2;
                }
                out
            })
            .collect()
    }

    /// Gradient of `Σ_i c_i · f(s_i, a_i)`.
    ///
    /// Coefficients are first summed per distinct input, so the cost scales
    /// with the number of distinct pairs rather than the batch size.
    pub fn grad_params(&self, batch: &[(StateAction, f64)]) -> GradVector {
        let na = self.layout.n_actions;
        let mut coef = vec![0.0; self.layout.n_states * na];
        for (sa, c) in batch {
            coef[sa.state * na + sa.action] += c;
        }
        self.grad_from_table(&coef)
    }

    /// Gradient of `Σ_{s,a} table[s·n_actions + a] · f(s, a)`.
    ///
    /// All inputs with a non-zero coefficient go through the network together
    /// as one matrix.
    pub fn grad_from_table(&self, table: &[f64]) -> GradVector {
        let na = self.layout.n_actions;
        let rows: Vec<(StateAction, f64)> = table
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(idx, &c)| (StateAction::new(idx / na, idx % na), c))
            .collect();
        let mut grad = vec![0.0; self.values.len()];
        if rows.is_empty() {
            return GradVector { values: grad };
        }
        let o = self.layout.offsets();
        let d = self.layout.input_dim();
        let [n1, n2] = self.layout.hidden;
        let p = &self.values;
        let m = rows.len();
        let pairs: Vec<StateAction> = rows.iter().map(|r| r.0).collect();
        let (h1, h2, w2) = self.hidden_batch(&pairs);

        let coef = DVector::from_iterator(m, rows.iter().map(|r| r.1));
        let gw3 = h2.tr_mul(&coef);
        grad[o.w3..o.w3 + n2].copy_from_slice(gw3.as_slice());
        grad[o.b3] = coef.sum();

        let dz2 = DMatrix::from_fn(m, n2, |i, k| coef[i] * p[o.w3 + k] * (1.0 - h2[(i, k)] * h2[(i, k)]));
        let gw2 = dz2.tr_mul(&h1);
        for k in 0..n2 {
            grad[o.b2 + k] = dz2.column(k).sum();
            for j in 0..n1 {
                grad[o.w2 + k * n1 + j] = gw2[(k, j)];
            }
        }

        let dh1 = &dz2 * &w2;
        for (i, (sa, _)) in rows.iter().enumerate() {
            let col_a = self.layout.n_states + sa.action;
            for j in 0..n1 {
                let dz1 = dh1[(i, j)] * (1.0 - h1[(i, j)] * h1[(i, j)]);
                grad[o.w1 + j * d + sa.state] += dz1;
                grad[o.w1 + j * d + col_a] += dz1;
                grad[o.b1 + j] += dz1;
            }
        }
        GradVector { values: grad }
    }

    /// Forward-mode derivative `∇_θ f(s, a) · direction`.
    pub fn directional(&self, sa: StateAction, direction: &GradVector) -> f64 {
        let o = self.layout.offsets();
        let d = self.layout.input_dim();
        let [n1, n2] = self.layout.hidden;
        let p = &self.values;
        let t = &direction.values;
        let Trace { h1, h2, .. } = self.trace(sa);
        let col_s = sa.state;
        let col_a = self.layout.n_states + sa.action;
        let dh1: Vec<f64> = (0..n1)
            .map(|j| {
                let dz1 = t[o.w1 + j * d + col_s] + t[o.w1 + j * d + col_a] + t[o.b1 + j];
                (1.0 - h1[j] * h1[j]) * dz1
            })
            .collect();
        let mut out = t[o.b3];
        for k in 0..n2 {
            let row = o.w2 + k * n1;
            let dz2 = dot(&t[row..row + n1], &h1) + dot(&p[row..row + n1], &dh1) + t[o.b2 + k];
            let dh2 = (1.0 - h2[k] * h2[k]) * dz2;
            out += t[o.w3 + k] * h2[k] + p[o.w3 + k] * dh2;
        }
        out
    }

    /// `layout <n_states> <n_actions> <h1> <h2>` followed by one value per
    /// line.
    pub fn to_text(&self) -> String {
        let l = self.layout;
        let mut out = format!("layout {} {} {} {}\n", l.n_states, l.n_actions, l.hidden[0], l.hidden[1]);
        for v in &self.values {
            writeln!(out, "{v}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| CailError::Parse("empty parameter file".into()))?;
        let dims: Vec<usize> = header
            .strip_prefix("layout ")
            .ok_or_else(|| CailError::Parse("missing layout header".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| CailError::Parse(format!("bad layout field {t:?}"))))
            .collect::<Result<_>>()?;
        let [ns, na, h1, h2] = dims[..] else {
            return Err(CailError::Parse("layout header needs four fields".into()));
        };
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse().map_err(|_| CailError::Parse(format!("bad value {l:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        Self::from_values(NetLayout::new(ns, na, [h1, h2]), values)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences `(L(θ + h e_k) - L(θ - h e_k)) / 2h` per coordinate.
pub fn finite_difference_grad<F>(loss: F, params: &ParamVector, h: f64) -> GradVector
where
    F: Fn(&ParamVector) -> f64,
{
    let values = (0..params.len())
        .map(|k| (loss(&params.perturbed(k, h)) - loss(&params.perturbed(k, -h))) / (2.0 * h))
        .collect();
    GradVector { values }
}

/// `‖a - b‖ / max(‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(floor)
}
