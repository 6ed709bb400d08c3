use rayon::prelude::*;

use super::{CellKind, Layout, NetworkParams, NeuralError};
use crate::matrix::{gemv_acc, gemv_t_acc, outer_acc, Matrix};
use crate::num::Scalar;

/// Input Jacobian of one output dimension: `step(i)[(t, j)] = ∂y[i, d] / ∂x[t, j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian<T> {
    steps: Vec<Matrix<T>>,
}

impl<T: Scalar> Jacobian<T> {
    pub fn from_steps(steps: Vec<Matrix<T>>) -> Self {
        Self { steps }
    }

    /// Number of output steps.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Sensitivities of output step `i` to every input entry (T×K).
    pub fn step(&self, i: usize) -> &Matrix<T> {
        &self.steps[i]
    }

    pub fn get(&self, i: usize, t: usize, j: usize) -> T {
        self.steps[i][(t, j)]
    }

    pub fn steps(&self) -> &[Matrix<T>] {
        &self.steps
    }
}

/// Activations of one direction, indexed by processing position.
struct DirectionTrace<T> {
    /// Time step handled at each processing position.
    order: Vec<usize>,
    h: Vec<T>,
    c: Vec<T>,
    gates: Vec<T>,
}

struct CellView<'a, T> {
    w_in: &'a [T],
    w_rec: &'a [T],
    bias: &'a [T],
}

struct CellGrads<'a, T> {
    w_in: &'a mut [T],
    w_rec: &'a mut [T],
    bias: &'a mut [T],
}

fn split_cell<'a, T>(l: &Layout, slice: &'a [T]) -> CellView<'a, T> {
    let (wi, wr, b) = l.cell_parts();
    CellView { w_in: &slice[wi], w_rec: &slice[wr], bias: &slice[b] }
}

fn split_cell_mut<'a, T>(l: &Layout, slice: &'a mut [T]) -> CellGrads<'a, T> {
    let (wi, wr, _) = l.cell_parts();
    let (w_in, rest) = slice.split_at_mut(wi.end);
    let (w_rec, bias) = rest.split_at_mut(wr.end - wr.start);
    CellGrads { w_in, w_rec, bias }
}

/// Full forward pass state needed for backpropagation.
pub(crate) struct Trace<T> {
    fwd: DirectionTrace<T>,
    bwd: DirectionTrace<T>,
    pub output: Matrix<T>,
}

impl<T: Scalar> NetworkParams<T> {
    fn check_input(&self, x: &Matrix<T>) -> Result<(), NeuralError> {
        if x.cols() != self.config.input_size {
            return Err(NeuralError::InputWidth { expected: self.config.input_size, got: x.cols() });
        }
        if x.rows() == 0 {
            return Err(NeuralError::EmptySequence);
        }
        Ok(())
    }

    /// Output sequence (T × output_size) for input rows `x` (T × input_size).
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>, NeuralError> {
        self.check_input(x)?;
        Ok(self.trace(x).output)
    }

    pub(crate) fn trace(&self, x: &Matrix<T>) -> Trace<T> {
        let l = self.layout();
        let steps = x.rows();
        let fwd = run_direction(self.config.cell, &l, split_cell(&l, &self.data[l.cell(0)]), x, (0..steps).collect());
        let bwd = run_direction(self.config.cell, &l, split_cell(&l, &self.data[l.cell(1)]), x, (0..steps).rev().collect());
        let head_w = &self.data[l.head_weights()];
        let head_b = &self.data[l.head_bias()];
        let mut output = Matrix::zeros(steps, l.o);
        let mut joint = vec![T::zero(); 2 * l.h];
        for t in 0..steps {
            joint[..l.h].copy_from_slice(&fwd.h[t * l.h..(t + 1) * l.h]);
            let p = steps - 1 - t;
            joint[l.h..].copy_from_slice(&bwd.h[p * l.h..(p + 1) * l.h]);
            let y = output.row_mut(t);
            y.copy_from_slice(head_b);
            gemv_acc(y, head_w, &joint);
        }
        Trace { fwd, bwd, output }
    }

    /// Backpropagates output gradients `dy`. Returns parameter gradients (when
    /// requested) and the input gradient.
    pub(crate) fn backward(&self, x: &Matrix<T>, trace: &Trace<T>, dy: &Matrix<T>, param_grads: bool) -> (Option<Vec<T>>, Matrix<T>) {
        let l = self.layout();
        let steps = x.rows();
        let head_w = &self.data[l.head_weights()];
        let mut grads = param_grads.then(|| vec![T::zero(); self.data.len()]);

        // Head: split dy into per-direction hidden-state gradients.
        let mut dh_fwd = vec![T::zero(); steps * l.h];
        let mut dh_bwd = vec![T::zero(); steps * l.h];
        let mut djoint = vec![T::zero(); 2 * l.h];
        let mut joint = vec![T::zero(); 2 * l.h];
        for t in 0..steps {
            let p = steps - 1 - t;
            let g = dy.row(t);
            djoint.iter_mut().for_each(|v| *v = T::zero());
            gemv_t_acc(&mut djoint, head_w, g);
            dh_fwd[t * l.h..(t + 1) * l.h].copy_from_slice(&djoint[..l.h]);
            dh_bwd[p * l.h..(p + 1) * l.h].copy_from_slice(&djoint[l.h..]);
            if let Some(grads) = grads.as_mut() {
                joint[..l.h].copy_from_slice(&trace.fwd.h[t * l.h..(t + 1) * l.h]);
                joint[l.h..].copy_from_slice(&trace.bwd.h[p * l.h..(p + 1) * l.h]);
                outer_acc(&mut grads[l.head_weights()], g, &joint);
                for (b, &v) in grads[l.head_bias()].iter_mut().zip(g) {
                    *b += v;
                }
            }
        }

        let mut dx = Matrix::zeros(steps, l.k);
        for (dir, (dtrace, dh)) in [(&trace.fwd, &dh_fwd), (&trace.bwd, &dh_bwd)].into_iter().enumerate() {
            let cell = split_cell(&l, &self.data[l.cell(dir)]);
            let cell_grads = grads.as_mut().map(|g| split_cell_mut(&l, &mut g[l.cell(dir)]));
            backprop_direction(self.config.cell, &l, cell, x, dtrace, dh, &mut dx, cell_grads);
        }
        (grads, dx)
    }

    /// Mean squared error over all steps and outputs, and its parameter gradient.
    pub fn loss_and_grads(&self, x: &Matrix<T>, target: &Matrix<T>) -> Result<(T, Vec<T>), NeuralError> {
        self.check_input(x)?;
        let expected = (x.rows(), self.config.output_size);
        if target.shape() != expected {
            return Err(NeuralError::TargetShape { expected, got: target.shape() });
        }
        let trace = self.trace(x);
        let count = T::of((expected.0 * expected.1) as f64);
        let mut dy = Matrix::zeros(expected.0, expected.1);
        let mut loss = T::zero();
        for ((d, &y), &t) in dy.as_mut_slice().iter_mut().zip(trace.output.as_slice()).zip(target.as_slice()) {
            let e = y - t;
            loss += e * e;
            *d = (e + e) / count;
        }
        let (grads, _) = self.backward(x, &trace, &dy, true);
        Ok((loss / count, grads.expect("parameter gradients requested")))
    }

    /// Mean squared error only.
    pub fn loss(&self, x: &Matrix<T>, target: &Matrix<T>) -> Result<T, NeuralError> {
        let y = self.forward(x)?;
        if target.shape() != y.shape() {
            return Err(NeuralError::TargetShape { expected: y.shape(), got: target.shape() });
        }
        let n = T::of(y.as_slice().len() as f64);
        Ok(y.as_slice().iter().zip(target.as_slice()).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / n)
    }

    /// Exact input Jacobian of output dimension `dim`, one reverse pass per output step.
    pub fn input_jacobian(&self, x: &Matrix<T>, dim: usize) -> Result<Jacobian<T>, NeuralError> {
        self.check_input(x)?;
        if dim >= self.config.output_size {
            return Err(NeuralError::OutputDim { dim, outputs: self.config.output_size });
        }
        let trace = self.trace(x);
        let steps = x.rows();
        let out = self.config.output_size;
        let rows = (0..steps)
            .into_par_iter()
            .map(|i| {
                let mut seed = Matrix::zeros(steps, out);
                seed[(i, dim)] = T::one();
                self.backward(x, &trace, &seed, false).1
            })
            .collect();
        Ok(Jacobian { steps: rows })
    }
}

fn run_direction<T: Scalar>(kind: CellKind, l: &Layout, cell: CellView<'_, T>, x: &Matrix<T>, order: Vec<usize>) -> DirectionTrace<T> {
    let (h, gh) = (l.h, l.gh);
    let steps = order.len();
    let mut hs = vec![T::zero(); steps * h];
    let mut cs = if kind == CellKind::Lstm { vec![T::zero(); steps * h] } else { Vec::new() };
    let mut gates = vec![T::zero(); steps * gh];
    let zeros = vec![T::zero(); h];
    let mut a = vec![T::zero(); gh];
    for (p, &t) in order.iter().enumerate() {
        a.copy_from_slice(cell.bias);
        gemv_acc(&mut a, cell.w_in, x.row(t));
        let h_prev = if p == 0 { &zeros[..] } else { &hs[(p - 1) * h..p * h] };
        gemv_acc(&mut a, cell.w_rec, h_prev);
        match kind {
            CellKind::TanhRnn => {
                for u in 0..h {
                    let v = a[u].tanh();
                    gates[p * gh + u] = v;
                    hs[p * h + u] = v;
                }
            }
            CellKind::Lstm => {
                for u in 0..h {
                    let i = a[u].sigmoid();
                    let f = a[h + u].sigmoid();
                    let g = a[2 * h + u].tanh();
                    let o = a[3 * h + u].sigmoid();
                    let c_prev = if p == 0 { T::zero() } else { cs[(p - 1) * h + u] };
                    let c = f * c_prev + i * g;
                    let base = p * gh;
                    gates[base + u] = i;
                    gates[base + h + u] = f;
                    gates[base + 2 * h + u] = g;
                    gates[base + 3 * h + u] = o;
                    cs[p * h + u] = c;
                    hs[p * h + u] = o * c.tanh();
                }
            }
        }
    }
    DirectionTrace { order, h: hs, c: cs, gates }
}

#[allow(clippy::too_many_arguments)]
fn backprop_direction<T: Scalar>(
    kind: CellKind,
    l: &Layout,
    cell: CellView<'_, T>,
    x: &Matrix<T>,
    trace: &DirectionTrace<T>,
    dh_ext: &[T],
    dx: &mut Matrix<T>,
    mut grads: Option<CellGrads<'_, T>>,
) {
    let (h, gh) = (l.h, l.gh);
    let one = T::one();
    let zeros = vec![T::zero(); h];
    let mut dh_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    let mut da = vec![T::zero(); gh];
    for p in (0..trace.order.len()).rev() {
        let t = trace.order[p];
        let h_prev = if p == 0 { &zeros[..] } else { &trace.h[(p - 1) * h..p * h] };
        let g = &trace.gates[p * gh..(p + 1) * gh];
        match kind {
            CellKind::TanhRnn => {
                for u in 0..h {
                    let dh = dh_ext[p * h + u] + dh_next[u];
                    da[u] = dh * (one - g[u] * g[u]);
                }
            }
            CellKind::Lstm => {
                for u in 0..h {
                    let dh = dh_ext[p * h + u] + dh_next[u];
                    let (i, f, gg, o) = (g[u], g[h + u], g[2 * h + u], g[3 * h + u]);
                    let c = trace.c[p * h + u];
                    let c_prev = if p == 0 { T::zero() } else { trace.c[(p - 1) * h + u] };
                    let tc = c.tanh();
                    let dc = dc_next[u] + dh * o * (one - tc * tc);
                    da[u] = dc * gg * i * (one - i);
                    da[h + u] = dc * c_prev * f * (one - f);
                    da[2 * h + u] = dc * i * (one - gg * gg);
                    da[3 * h + u] = dh * tc * o * (one - o);
                    dc_next[u] = dc * f;
                }
            }
        }
        if let Some(gr) = grads.as_mut() {
            outer_acc(gr.w_in, &da, x.row(t));
            outer_acc(gr.w_rec, &da, h_prev);
            for (b, &v) in gr.bias.iter_mut().zip(&da) {
                *b += v;
            }
        }
        gemv_t_acc(dx.row_mut(t), cell.w_in, &da);
        dh_next.iter_mut().for_each(|v| *v = T::zero());
        gemv_t_acc(&mut dh_next, cell.w_rec, &da);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::NetworkConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn with_random_biases(mut p: NetworkParams<f64>, seed: u64) -> NetworkParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for name in ["forward.bias", "backward.bias", "head.bias"] {
            for v in p.tensor_mut(name).unwrap() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        p
    }

    /// Central difference of `f` around `x[idx]`.
    fn central(f: &dyn Fn(&[f64]) -> f64, x: &[f64], idx: usize, eps: f64) -> f64 {
        let mut plus = x.to_vec();
        plus[idx] += eps;
        let mut minus = x.to_vec();
        minus[idx] -= eps;
        (f(&plus) - f(&minus)) / (2.0 * eps)
    }

    fn close(analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        diff <= 1e-6 || diff <= 1e-4 * analytic.abs().max(numeric.abs())
    }

    #[test]
    fn single_step_sees_both_cells_once() {
        let c = NetworkConfig { cell: CellKind::TanhRnn, hidden_size: 2, input_size: 2, output_size: 1, seed: 3 };
        let p = with_random_biases(NetworkParams::init(&c).unwrap(), 1);
        let x = Matrix::from_rows(2, [[0.3, -0.7]]);
        let y = p.forward(&x).unwrap();
        // Direct single-step evaluation: h = tanh(W x + b) for each direction.
        let step = |dir: &str| -> Vec<f64> {
            let w = p.tensor(&format!("{dir}.w_in")).unwrap();
            let b = p.tensor(&format!("{dir}.bias")).unwrap();
            (0..2).map(|u| (w[u * 2] * 0.3 + w[u * 2 + 1] * -0.7 + b[u]).tanh()).collect()
        };
        let joint: Vec<f64> = step("forward").into_iter().chain(step("backward")).collect();
        let hw = p.tensor("head.w").unwrap();
        let expected = p.tensor("head.bias").unwrap()[0] + hw.iter().zip(&joint).map(|(a, b)| a * b).sum::<f64>();
        assert!((y[(0, 0)] - expected).abs() < 1e-14);
    }

    #[test]
    fn mirrored_network_reverses_output() {
        for cell in [CellKind::Lstm, CellKind::TanhRnn] {
            for seed in 0..4 {
                let c = NetworkConfig { cell, hidden_size: 3, input_size: 2, output_size: 2, seed };
                let p = with_random_biases(NetworkParams::init(&c).unwrap(), seed + 10);
                let x = random_input(5, 2, seed);
                let y = p.forward(&x).unwrap();
                let y_rev = p.mirrored().forward(&x.reversed_rows()).unwrap();
                assert!(y.reversed_rows().max_abs_diff(&y_rev) < 1e-13);
            }
        }
    }

    #[test]
    fn zero_weights_output_head_bias() {
        let c = NetworkConfig::new(3, 2);
        let mut p = NetworkParams::<f64>::zeros(&c).unwrap();
        p.tensor_mut("head.bias").unwrap().copy_from_slice(&[0.25, -1.5]);
        let y = p.forward(&random_input(4, 3, 0)).unwrap();
        for row in y.row_iter() {
            assert_eq!(row, [0.25, -1.5]);
        }
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let p = NetworkParams::<f64>::init(&NetworkConfig { hidden_size: 4, ..NetworkConfig::new(3, 2) }).unwrap();
        let x = random_input(4, 3, 1);
        let y = p.forward(&x).unwrap();
        let (loss, grads) = p.loss_and_grads(&x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn doubling_error_doubles_root_loss() {
        let p = NetworkParams::<f64>::init(&NetworkConfig { hidden_size: 4, ..NetworkConfig::new(3, 2) }).unwrap();
        let x = random_input(4, 3, 2);
        let y = p.forward(&x).unwrap();
        let offset = random_input(4, 2, 3);
        let target1 = Matrix::from_vec(4, 2, y.as_slice().iter().zip(offset.as_slice()).map(|(a, b)| a + b).collect());
        let target2 = Matrix::from_vec(4, 2, y.as_slice().iter().zip(offset.as_slice()).map(|(a, b)| a + 2.0 * b).collect());
        let l1 = p.loss(&x, &target1).unwrap().sqrt();
        let l2 = p.loss(&x, &target2).unwrap().sqrt();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        for cell in [CellKind::Lstm, CellKind::TanhRnn] {
            let c = NetworkConfig { cell, hidden_size: 3, input_size: 3, output_size: 2, seed: 0 };
            let p = with_random_biases(NetworkParams::init(&c).unwrap(), 5);
            let x = random_input(4, 3, 7);
            let target = random_input(4, 2, 8);
            let (_, grads) = p.loss_and_grads(&x, &target).unwrap();
            let f = |w: &[f64]| NetworkParams::from_flat(&c, w.to_vec()).unwrap().loss(&x, &target).unwrap();
            for idx in 0..grads.len() {
                let numeric = central(&f, p.as_slice(), idx, 1e-5);
                assert!(close(grads[idx], numeric), "{cell:?} param {idx}: {} vs {numeric}", grads[idx]);
            }
        }
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        for cell in [CellKind::Lstm, CellKind::TanhRnn] {
            let c = NetworkConfig { cell, hidden_size: 4, input_size: 2, output_size: 2, seed: 0 };
            let p = with_random_biases(NetworkParams::init(&c).unwrap(), 6);
            let x = random_input(3, 2, 9);
            for d in 0..2 {
                let jac = p.input_jacobian(&x, d).unwrap();
                for i in 0..3 {
                    let f = |v: &[f64]| p.forward(&Matrix::from_vec(3, 2, v.to_vec())).unwrap()[(i, d)];
                    for t in 0..3 {
                        for j in 0..2 {
                            let numeric = central(&f, x.as_slice(), t * 2 + j, 1e-5);
                            assert!(close(jac.get(i, t, j), numeric), "{cell:?} d={d} i={i} t={t} j={j}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn no_recurrence_means_no_temporal_coupling() {
        let c = NetworkConfig { cell: CellKind::TanhRnn, hidden_size: 3, input_size: 2, output_size: 1, seed: 4 };
        let mut p = NetworkParams::<f64>::init(&c).unwrap();
        p.tensor_mut("forward.w_rec").unwrap().fill(0.0);
        p.tensor_mut("backward.w_rec").unwrap().fill(0.0);
        let jac = p.input_jacobian(&random_input(4, 2, 0), 0).unwrap();
        for i in 0..4 {
            for t in 0..4 {
                let row = jac.step(i).row(t);
                if t != i {
                    assert!(row.iter().all(|&v| v == 0.0));
                } else {
                    assert!(row.iter().any(|&v| v != 0.0));
                }
            }
        }
    }

    #[test]
    fn zero_hidden_weights_give_constant_diagonal() {
        // Without recurrence and at a constant input every step has the same
        // local derivative through the head.
        let c = NetworkConfig { cell: CellKind::TanhRnn, hidden_size: 2, input_size: 2, output_size: 1, seed: 0 };
        let mut p = NetworkParams::<f64>::init(&c).unwrap();
        p.tensor_mut("forward.w_rec").unwrap().fill(0.0);
        p.tensor_mut("backward.w_rec").unwrap().fill(0.0);
        p.tensor_mut("forward.bias").unwrap().fill(0.0);
        p.tensor_mut("backward.bias").unwrap().fill(0.0);
        let x = Matrix::zeros(5, 2);
        let jac = p.input_jacobian(&x, 0).unwrap();
        for i in 1..5 {
            assert_eq!(jac.step(i).row(i), jac.step(0).row(0));
        }
    }

    #[test]
    fn shape_errors() {
        let p = NetworkParams::<f64>::init(&NetworkConfig::new(3, 2)).unwrap();
        assert!(matches!(p.forward(&Matrix::zeros(2, 4)), Err(NeuralError::InputWidth { .. })));
        assert!(matches!(p.forward(&Matrix::zeros(0, 3)), Err(NeuralError::EmptySequence)));
        assert!(matches!(p.loss_and_grads(&Matrix::zeros(2, 3), &Matrix::zeros(2, 1)), Err(NeuralError::TargetShape { .. })));
        assert!(matches!(p.input_jacobian(&Matrix::zeros(2, 3), 2), Err(NeuralError::OutputDim { .. })));
    }

    #[test]
    fn f32_forward_tracks_f64() {
        let c = NetworkConfig { hidden_size: 4, ..NetworkConfig::new(3, 2) };
        let p64 = NetworkParams::<f64>::init(&c).unwrap();
        let p32 = NetworkParams::<f32>::init(&c).unwrap();
        let x64 = random_input(6, 3, 4);
        let x32 = Matrix::from_vec(6, 3, x64.as_slice().iter().map(|&v| v as f32).collect());
        let y64 = p64.forward(&x64).unwrap();
        let y32 = p32.forward(&x32).unwrap();
        for (a, b) in y64.as_slice().iter().zip(y32.as_slice()) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}
