//! Bidirectional GRU producing the shared hidden sequence H.
//!
//! Both task-conditioning paths read the same H tensors of one graph, so a
//! single backward pass accumulates every head's loss into the encoder.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamSet, Tensor};

/// Parameter handles for one GRU direction.
#[derive(Debug, Clone)]
pub struct GruDirection {
    pub w_update: ParamId,
    pub u_update: ParamId,
    pub b_update: ParamId,
    pub w_reset: ParamId,
    pub u_reset: ParamId,
    pub b_reset: ParamId,
    pub w_cand: ParamId,
    pub u_cand: ParamId,
    pub b_cand: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl GruDirection {
    /// Register the nine gate tensors. Weights are uniform in [-0.08, 0.08],
    /// biases zero.
    pub fn register(
        params: &mut ParamSet,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> GruDirection {
        let mut mat = |name: &str, rows: usize, cols: usize, params: &mut ParamSet| {
            let values = (0..rows * cols).map(|_| rng.gen_range(-0.08..=0.08)).collect();
            params.add(format!("{prefix}.{name}"), vec![rows, cols], values)
        };
        let w_update = mat("w_update", hidden, input_dim, params);
        let u_update = mat("u_update", hidden, hidden, params);
        let w_reset = mat("w_reset", hidden, input_dim, params);
        let u_reset = mat("u_reset", hidden, hidden, params);
        let w_cand = mat("w_cand", hidden, input_dim, params);
        let u_cand = mat("u_cand", hidden, hidden, params);
        let b_update = params.add(format!("{prefix}.b_update"), vec![hidden], vec![0.0; hidden]);
        let b_reset = params.add(format!("{prefix}.b_reset"), vec![hidden], vec![0.0; hidden]);
        let b_cand = params.add(format!("{prefix}.b_cand"), vec![hidden], vec![0.0; hidden]);
        GruDirection {
            w_update,
            u_update,
            b_update,
            w_reset,
            u_reset,
            b_reset,
            w_cand,
            u_cand,
            b_cand,
            input_dim,
            hidden,
        }
    }
}

/// One GRU step:
///
/// ```text
/// z     = sigmoid(W_z x + U_z h_prev + b_z)
/// r     = sigmoid(W_r x + U_r h_prev + b_r)
/// h~    = tanh(W_h x + U_h (r . h_prev) + b_h)
/// h_new = (1 - z) . h_prev + z . h~
/// ```
pub fn gru_cell(g: &mut Graph, dir: &GruDirection, x: Tensor, h_prev: Tensor) -> Result<Tensor> {
    let zero_bias = g.zeros(dir.hidden);
    let gate = |g: &mut Graph, w: ParamId, u: ParamId, b: ParamId, h: Tensor| -> Result<Tensor> {
        let wt = g.param(w);
        let ut = g.param(u);
        let bt = g.param(b);
        let wx = g.affine(wt, x, bt)?;
        let uh = g.affine(ut, h, zero_bias)?;
        Ok(g.add(wx, uh))
    };
    let z_pre = gate(g, dir.w_update, dir.u_update, dir.b_update, h_prev)?;
    let z = g.sigmoid(z_pre);
    let r_pre = gate(g, dir.w_reset, dir.u_reset, dir.b_reset, h_prev)?;
    let r = g.sigmoid(r_pre);
    let gated_prev = g.mul(r, h_prev);
    let cand_pre = gate(g, dir.w_cand, dir.u_cand, dir.b_cand, gated_prev)?;
    let cand = g.tanh(cand_pre);

    let z_prev = g.mul(z, h_prev);
    let keep = g.sub(h_prev, z_prev);
    let z_cand = g.mul(z, cand);
    Ok(g.add(keep, z_cand))
}

/// Both GRU directions of the sentence encoder.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub forward: GruDirection,
    pub backward: GruDirection,
}

impl BiGru {
    pub fn register(
        params: &mut ParamSet,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> BiGru {
        BiGru {
            forward: GruDirection::register(params, "gru.fwd", input_dim, hidden, rng),
            backward: GruDirection::register(params, "gru.bwd", input_dim, hidden, rng),
        }
    }

    /// Width of each shared hidden vector `h_i`.
    pub fn output_dim(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    /// Run both directions from zero initial states and concatenate the
    /// states per position: `h_i = [fwd_i ; bwd_i]`.
    pub fn encode(&self, g: &mut Graph, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        assert!(!xs.is_empty(), "encoder requires n >= 1 tokens");
        let n = xs.len();
        let mut fwd = Vec::with_capacity(n);
        let mut state = g.zeros(self.forward.hidden);
        for &x in xs {
            state = gru_cell(g, &self.forward, x, state)?;
            fwd.push(state);
        }
        let mut bwd = vec![None; n];
        let mut state = g.zeros(self.backward.hidden);
        for i in (0..n).rev() {
            state = gru_cell(g, &self.backward, xs[i], state)?;
            bwd[i] = Some(state);
        }
        Ok((0..n).map(|i| g.concat(&[fwd[i], bwd[i].unwrap()])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_direction(params: &mut ParamSet, input_dim: usize, hidden: usize) -> GruDirection {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dir = GruDirection::register(params, "z", input_dim, hidden, &mut rng);
        for id in params.ids().collect::<Vec<_>>() {
            params.get_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
        }
        dir
    }

    #[test]
    fn zero_weights_halve_previous_state() {
        let mut params = ParamSet::new();
        let dir = zero_direction(&mut params, 2, 3);
        let mut g = Graph::new(&params);
        let x = g.vector(vec![1.0, -1.0]);
        let h_prev = g.vector(vec![0.4, -0.6, 1.0]);
        let h = gru_cell(&mut g, &dir, x, h_prev).unwrap();
        // z = sigmoid(0) = 0.5, candidate = tanh(0) = 0.
        assert_eq!(g.values(h), &[0.2, -0.3, 0.5]);
    }

    #[test]
    fn zero_everything_stays_zero() {
        let mut params = ParamSet::new();
        let dir = zero_direction(&mut params, 2, 3);
        let mut g = Graph::new(&params);
        let x = g.zeros(2);
        let h_prev = g.zeros(3);
        let h = gru_cell(&mut g, &dir, x, h_prev).unwrap();
        assert_eq!(g.values(h), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn cell_matches_hand_evaluated_gates() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dir = GruDirection::register(&mut params, "g", 2, 2, &mut rng);
        // Overwrite with fixed values so the oracle is explicit.
        let fill = |params: &mut ParamSet, id: ParamId, vals: &[f64]| {
            params.get_mut(id).values.copy_from_slice(vals);
        };
        fill(&mut params, dir.w_update, &[0.1, -0.2, 0.3, 0.4]);
        fill(&mut params, dir.u_update, &[0.05, 0.0, -0.1, 0.2]);
        fill(&mut params, dir.b_update, &[0.01, -0.01]);
        fill(&mut params, dir.w_reset, &[-0.3, 0.2, 0.1, 0.0]);
        fill(&mut params, dir.u_reset, &[0.2, -0.2, 0.0, 0.1]);
        fill(&mut params, dir.b_reset, &[0.0, 0.02]);
        fill(&mut params, dir.w_cand, &[0.4, 0.1, -0.2, 0.3]);
        fill(&mut params, dir.u_cand, &[0.1, 0.1, -0.1, -0.1]);
        fill(&mut params, dir.b_cand, &[-0.02, 0.03]);

        let x = [0.7, -1.1];
        let h_prev = [0.25, -0.5];

        // Step-by-step oracle with plain arithmetic.
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let matvec = |w: &[f64], v: &[f64]| {
            [w[0] * v[0] + w[1] * v[1], w[2] * v[0] + w[3] * v[1]]
        };
        let wz = matvec(&[0.1, -0.2, 0.3, 0.4], &x);
        let uz = matvec(&[0.05, 0.0, -0.1, 0.2], &h_prev);
        let z = [sigmoid(wz[0] + uz[0] + 0.01), sigmoid(wz[1] + uz[1] - 0.01)];
        let wr = matvec(&[-0.3, 0.2, 0.1, 0.0], &x);
        let ur = matvec(&[0.2, -0.2, 0.0, 0.1], &h_prev);
        let r = [sigmoid(wr[0] + ur[0]), sigmoid(wr[1] + ur[1] + 0.02)];
        let rh = [r[0] * h_prev[0], r[1] * h_prev[1]];
        let wc = matvec(&[0.4, 0.1, -0.2, 0.3], &x);
        let uc = matvec(&[0.1, 0.1, -0.1, -0.1], &rh);
        let cand = [(wc[0] + uc[0] - 0.02).tanh(), (wc[1] + uc[1] + 0.03).tanh()];
        let want = [
            (1.0 - z[0]) * h_prev[0] + z[0] * cand[0],
            (1.0 - z[1]) * h_prev[1] + z[1] * cand[1],
        ];

        let mut g = Graph::new(&params);
        let xt = g.vector(x.to_vec());
        let ht = g.vector(h_prev.to_vec());
        let h = gru_cell(&mut g, &dir, xt, ht).unwrap();
        for (got, want) in g.values(h).iter().zip(&want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn single_token_concatenates_both_directions() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bigru = BiGru::register(&mut params, 3, 2, &mut rng);
        let mut g = Graph::new(&params);
        let x = g.vector(vec![0.5, -0.5, 1.0]);
        let h = bigru.encode(&mut g, &[x]).unwrap();
        assert_eq!(h.len(), 1);

        let z = g.zeros(2);
        let f = gru_cell(&mut g, &bigru.forward, x, z).unwrap();
        let z = g.zeros(2);
        let b = gru_cell(&mut g, &bigru.backward, x, z).unwrap();
        let expect: Vec<f64> = g.values(f).iter().chain(g.values(b)).cloned().collect();
        assert_eq!(g.values(h[0]), expect.as_slice());
    }

    #[test]
    fn zero_parameters_give_zero_states() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bigru = BiGru::register(&mut params, 2, 3, &mut rng);
        for id in params.ids().collect::<Vec<_>>() {
            params.get_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new(&params);
        let xs: Vec<Tensor> = (0..4).map(|i| g.vector(vec![i as f64, 1.0])).collect();
        for h in bigru.encode(&mut g, &xs).unwrap() {
            assert!(g.values(h).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn tied_directions_mirror_reversed_input() {
        // With backward parameters tied to forward ones, the forward half of
        // H(X) equals the backward half of H(reverse(X)), reversed.
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bigru = BiGru::register(&mut params, 2, 3, &mut rng);
        let tie = [
            (bigru.forward.w_update, bigru.backward.w_update),
            (bigru.forward.u_update, bigru.backward.u_update),
            (bigru.forward.b_update, bigru.backward.b_update),
            (bigru.forward.w_reset, bigru.backward.w_reset),
            (bigru.forward.u_reset, bigru.backward.u_reset),
            (bigru.forward.b_reset, bigru.backward.b_reset),
            (bigru.forward.w_cand, bigru.backward.w_cand),
            (bigru.forward.u_cand, bigru.backward.u_cand),
            (bigru.forward.b_cand, bigru.backward.b_cand),
        ];
        for (f, b) in tie {
            let vals = params.get(f).values.clone();
            params.get_mut(b).values.copy_from_slice(&vals);
        }
        let inputs: Vec<Vec<f64>> =
            vec![vec![0.3, -0.4], vec![1.2, 0.1], vec![-0.7, 0.9], vec![0.0, 0.5]];
        let n = inputs.len();
        let hidden = 3;

        let run = |inputs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let mut g = Graph::new(&params);
            let xs: Vec<Tensor> = inputs.iter().map(|v| g.vector(v.clone())).collect();
            bigru.encode(&mut g, &xs).unwrap().iter().map(|&h| g.values(h).to_vec()).collect()
        };
        let h_fwd = run(&inputs);
        let reversed: Vec<Vec<f64>> = inputs.iter().rev().cloned().collect();
        let h_rev = run(&reversed);
        for i in 0..n {
            let forward_half = &h_fwd[i][..hidden];
            let backward_half_rev = &h_rev[n - 1 - i][hidden..];
            for (a, b) in forward_half.iter().zip(backward_half_rev) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn every_position_sees_the_whole_sentence() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let bigru = BiGru::register(&mut params, 2, 3, &mut rng);
        let base: Vec<Vec<f64>> = vec![vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.5, -0.6]];
        let run = |inputs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let mut g = Graph::new(&params);
            let xs: Vec<Tensor> = inputs.iter().map(|v| g.vector(v.clone())).collect();
            bigru.encode(&mut g, &xs).unwrap().iter().map(|&h| g.values(h).to_vec()).collect()
        };
        let h0 = run(&base);
        for j in 0..base.len() {
            let mut perturbed = base.clone();
            perturbed[j][0] += 0.25;
            let h1 = run(&perturbed);
            let changed = (0..base.len())
                .filter(|&i| i != j)
                .any(|i| h0[i].iter().zip(&h1[i]).any(|(a, b)| (a - b).abs() > 1e-12));
            assert!(changed, "perturbing x_{j} left every other h_i unchanged");
        }
    }
}
