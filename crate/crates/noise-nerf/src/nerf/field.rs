//! The radiance-field MLP: a relu trunk on encoded positions, a non-negative
//! density head read before direction injection, and a sigmoid color head
//! conditioned on the encoded view direction.
//!
//! Two forward paths exist and must stay bit-identical: a taped one for
//! gradients and a raw one for plain rendering. Both route every product and
//! sum through the same fixed-order kernels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{kernels, Tape, Tensor, Var};
use crate::{Error, Result};

/// Tensor order inside [`RadianceFieldParams::tensors`]: four trunk layers
/// (weight, bias each), the density head pair, the color hidden pair, and the
/// color output pair.
pub const N_PARAM_TENSORS: usize = 14;
const N_TRUNK_LAYERS: usize = 4;

/// Weights of the fixed MLP plus the encoding levels it was built for.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceFieldParams {
    l_pos: usize,
    l_dir: usize,
    hidden: usize,
    tensors: Vec<Tensor>,
}

/// Expected tensor shapes for the given architecture, in storage order.
fn expected_shapes(l_pos: usize, l_dir: usize, hidden: usize) -> Vec<Vec<usize>> {
    let mut shapes = Vec::with_capacity(N_PARAM_TENSORS);
    let mut in_dim = 6 * l_pos;
    for _ in 0..N_TRUNK_LAYERS {
        shapes.push(vec![in_dim, hidden]);
        shapes.push(vec![hidden]);
        in_dim = hidden;
    }
    shapes.push(vec![hidden, 1]);
    shapes.push(vec![1]);
    shapes.push(vec![hidden + 6 * l_dir, hidden]);
    shapes.push(vec![hidden]);
    shapes.push(vec![hidden, 3]);
    shapes.push(vec![3]);
    shapes
}

fn check_arch(l_pos: usize, l_dir: usize, hidden: usize) -> Result<()> {
    if l_pos < 1 || l_dir < 1 {
        return Err(Error::invalid("encoding levels must be at least 1"));
    }
    if hidden < 1 || hidden > u16::MAX as usize || l_pos > u16::MAX as usize || l_dir > u16::MAX as usize {
        return Err(Error::invalid("architecture dimensions out of range"));
    }
    Ok(())
}

impl RadianceFieldParams {
    /// Fresh weights, each layer uniform in ±1/sqrt(fan_in), drawn in storage
    /// order from one seeded stream.
    pub fn init(l_pos: usize, l_dir: usize, hidden: usize, seed: u64) -> Result<Self> {
        check_arch(l_pos, l_dir, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = expected_shapes(l_pos, l_dir, hidden);
        let mut tensors = Vec::with_capacity(N_PARAM_TENSORS);
        for pair in shapes.chunks(2) {
            let fan_in = pair[0][0] as f32;
            let bound = 1.0 / fan_in.sqrt();
            tensors.push(Tensor::rand_uniform(&pair[0], -bound, bound, &mut rng)?);
            tensors.push(Tensor::rand_uniform(&pair[1], -bound, bound, &mut rng)?);
        }
        Ok(RadianceFieldParams { l_pos, l_dir, hidden, tensors })
    }

    /// Wraps existing tensors (e.g. from a checkpoint), validating the shape
    /// chain and finiteness.
    pub fn from_tensors(l_pos: usize, l_dir: usize, hidden: usize, tensors: Vec<Tensor>) -> Result<Self> {
        check_arch(l_pos, l_dir, hidden)?;
        let shapes = expected_shapes(l_pos, l_dir, hidden);
        if tensors.len() != N_PARAM_TENSORS {
            return Err(Error::shape(format!(
                "field wants {N_PARAM_TENSORS} tensors, got {}",
                tensors.len()
            )));
        }
        for (i, (t, want)) in tensors.iter().zip(&shapes).enumerate() {
            if t.shape() != want.as_slice() {
                return Err(Error::shape(format!(
                    "field tensor {i} has shape {:?}, want {:?}",
                    t.shape(),
                    want
                )));
            }
        }
        Ok(RadianceFieldParams { l_pos, l_dir, hidden, tensors })
    }

    pub fn l_pos(&self) -> usize {
        self.l_pos
    }

    pub fn l_dir(&self) -> usize {
        self.l_dir
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Width of an encoded-position row (the noise row width as well).
    pub fn enc_pos_dim(&self) -> usize {
        6 * self.l_pos
    }

    pub fn enc_dir_dim(&self) -> usize {
        6 * self.l_dir
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// The field's tensors registered on a tape, trainable or frozen.
pub struct FieldVars {
    vars: Vec<Var>,
}

impl FieldVars {
    pub fn new(tape: &Tape, params: &RadianceFieldParams, trainable: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone().with_requires_grad(true))
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        FieldVars { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn check_rows(params: &RadianceFieldParams, pos_len: usize, dir_len: usize) -> Result<usize> {
    let (pd, dd) = (params.enc_pos_dim(), params.enc_dir_dim());
    if pos_len % pd != 0 || dir_len % dd != 0 || pos_len / pd != dir_len / dd || pos_len == 0 {
        return Err(Error::shape(format!(
            "encoded inputs disagree: {pos_len} position floats (row width {pd}) vs {dir_len} direction floats (row width {dd})"
        )));
    }
    Ok(pos_len / pd)
}

/// Taped forward pass over `[rows, enc_pos_dim]` positions (noise already
/// added upstream if any) and `[rows, enc_dir_dim]` directions. Returns
/// `(rgb [rows, 3] in (0,1), sigma [rows, 1] >= 0)`.
pub fn field_forward_taped(vars: &FieldVars, input_pos: &Var, enc_dir: &Var) -> Result<(Var, Var)> {
    let v = &vars.vars;
    let mut h = input_pos.clone();
    for layer in 0..N_TRUNK_LAYERS {
        h = h.matmul(&v[2 * layer])?.add_row(&v[2 * layer + 1])?.relu();
    }
    let sigma = h.matmul(&v[8])?.add_row(&v[9])?.relu();
    let ch = h.concat_cols(enc_dir)?.matmul(&v[10])?.add_row(&v[11])?.relu();
    let rgb = ch.matmul(&v[12])?.add_row(&v[13])?.sigmoid();
    Ok((rgb, sigma))
}

fn linear_raw(x: &[f32], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f32> {
    let (in_dim, out_dim) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(x.len(), rows * in_dim);
    let mut y = kernels::matmul(x, w.data(), rows, in_dim, out_dim);
    for chunk in y.chunks_mut(out_dim) {
        for (d, &bias) in chunk.iter_mut().zip(b.data()) {
            *d += bias;
        }
    }
    y
}

/// Raw (untaped) forward pass, bit-identical to [`field_forward_taped`].
/// Returns `(rgb flat [rows * 3], sigma flat [rows])`.
pub fn field_forward_raw(
    params: &RadianceFieldParams,
    input_pos: &[f32],
    enc_dir: &[f32],
) -> Result<(Vec<f32>, Vec<f32>)> {
    let rows = check_rows(params, input_pos.len(), enc_dir.len())?;
    let t = &params.tensors;
    let mut h = input_pos.to_vec();
    for layer in 0..N_TRUNK_LAYERS {
        h = linear_raw(&h, rows, &t[2 * layer], &t[2 * layer + 1]);
        for v in &mut h {
            *v = kernels::relu(*v);
        }
    }
    let mut sigma = linear_raw(&h, rows, &t[8], &t[9]);
    for v in &mut sigma {
        *v = kernels::relu(*v);
    }
    let hidden = params.hidden;
    let dd = params.enc_dir_dim();
    let mut cat = Vec::with_capacity(rows * (hidden + dd));
    for i in 0..rows {
        cat.extend_from_slice(&h[i * hidden..(i + 1) * hidden]);
        cat.extend_from_slice(&enc_dir[i * dd..(i + 1) * dd]);
    }
    let mut ch = linear_raw(&cat, rows, &t[10], &t[11]);
    for v in &mut ch {
        *v = kernels::relu(*v);
    }
    let mut rgb = linear_raw(&ch, rows, &t[12], &t[13]);
    for v in &mut rgb {
        *v = kernels::sigmoid(*v);
    }
    Ok((rgb, sigma))
}

/// Single-sample evaluation: `(color in [0,1]^3, density >= 0)`. `noise`, when
/// given, is added to the encoded position first; passing zeros is
/// bit-identical to passing nothing.
pub fn field_eval(
    params: &RadianceFieldParams,
    enc_pos: &[f32],
    enc_dir: &[f32],
    noise: Option<&[f32]>,
) -> Result<([f32; 3], f32)> {
    if enc_pos.len() != params.enc_pos_dim() || enc_dir.len() != params.enc_dir_dim() {
        return Err(Error::shape(format!(
            "encoded sample widths {} / {} do not match the field ({} / {})",
            enc_pos.len(),
            enc_dir.len(),
            params.enc_pos_dim(),
            params.enc_dir_dim()
        )));
    }
    let (rgb, sigma) = match noise {
        None => field_forward_raw(params, enc_pos, enc_dir)?,
        Some(n) => {
            if n.len() != enc_pos.len() {
                return Err(Error::shape(format!(
                    "noise width {} does not match encoded position width {}",
                    n.len(),
                    enc_pos.len()
                )));
            }
            let noisy: Vec<f32> = enc_pos.iter().zip(n).map(|(&e, &d)| e + d).collect();
            field_forward_raw(params, &noisy, enc_dir)?
        }
    };
    Ok(([rgb[0], rgb[1], rgb[2]], sigma[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nerf::encoding::{encode_direction_rows, encode_position_rows};
    use rand::SeedableRng;

    fn tiny_params(seed: u64) -> RadianceFieldParams {
        RadianceFieldParams::init(6, 2, 64, seed).unwrap()
    }

    #[test]
    fn init_is_seeded_and_shapes_chain() {
        let a = tiny_params(7);
        let b = tiny_params(7);
        assert_eq!(a, b);
        assert_ne!(a, tiny_params(8));
        assert_eq!(a.tensors().len(), N_PARAM_TENSORS);
        assert_eq!(a.enc_pos_dim(), 36);
        assert_eq!(a.enc_dir_dim(), 12);
        assert_eq!(a.n_params(), 20036);
        // Round-trip through from_tensors.
        let rebuilt =
            RadianceFieldParams::from_tensors(6, 2, 64, a.tensors().to_vec()).unwrap();
        assert_eq!(a, rebuilt);
    }

    #[test]
    fn from_tensors_rejects_wrong_shapes() {
        let a = tiny_params(1);
        let mut tensors = a.tensors().to_vec();
        tensors[0] = Tensor::zeros(&[36, 63]).unwrap();
        assert!(RadianceFieldParams::from_tensors(6, 2, 64, tensors).is_err());
        assert!(RadianceFieldParams::from_tensors(6, 2, 64, a.tensors()[..13].to_vec()).is_err());
        assert!(RadianceFieldParams::init(0, 2, 64, 0).is_err());
        assert!(RadianceFieldParams::init(6, 2, 0, 0).is_err());
    }

    #[test]
    fn outputs_stay_in_range_over_random_inputs() {
        let params = tiny_params(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let p = Tensor::rand_uniform(&[3], -1.2, 1.2, &mut rng).unwrap();
            let d = Tensor::rand_uniform(&[3], -1.0, 1.0, &mut rng).unwrap();
            let dn = crate::nerf::camera::normalize3([d.data()[0], d.data()[1], d.data()[2]]);
            let enc_p = encode_position_rows(&[[p.data()[0], p.data()[1], p.data()[2]]], 6, 2.0).unwrap();
            let enc_d = encode_direction_rows(&[dn], 2).unwrap();
            let (rgb, sigma) = field_eval(&params, &enc_p, &enc_d, None).unwrap();
            assert!(sigma >= 0.0);
            assert!(rgb.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn zero_noise_is_bit_identical_to_no_noise() {
        let params = tiny_params(11);
        let enc_p = encode_position_rows(&[[0.3, -0.6, 0.2]], 6, 2.0).unwrap();
        let enc_d = encode_direction_rows(&[[0.0, 0.0, -1.0]], 2).unwrap();
        let clean = field_eval(&params, &enc_p, &enc_d, None).unwrap();
        let zeros = vec![0.0f32; enc_p.len()];
        let zeroed = field_eval(&params, &enc_p, &enc_d, Some(&zeros)).unwrap();
        for c in 0..3 {
            assert_eq!(clean.0[c].to_bits(), zeroed.0[c].to_bits());
        }
        assert_eq!(clean.1.to_bits(), zeroed.1.to_bits());
    }

    #[test]
    fn taped_and_raw_forward_are_bit_identical() {
        let params = tiny_params(21);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let rows = 17;
        let pts: Vec<[f32; 3]> = (0..rows)
            .map(|_| {
                let t = Tensor::rand_uniform(&[3], -1.0, 1.0, &mut rng).unwrap();
                [t.data()[0], t.data()[1], t.data()[2]]
            })
            .collect();
        let dirs: Vec<[f32; 3]> = (0..rows)
            .map(|_| {
                let t = Tensor::rand_uniform(&[3], -1.0, 1.0, &mut rng).unwrap();
                crate::nerf::camera::normalize3([t.data()[0], t.data()[1], t.data()[2]])
            })
            .collect();
        let enc_p = encode_position_rows(&pts, 6, 2.0).unwrap();
        let enc_d = encode_direction_rows(&dirs, 2).unwrap();

        let (raw_rgb, raw_sigma) = field_forward_raw(&params, &enc_p, &enc_d).unwrap();

        let tape = Tape::new();
        let vars = FieldVars::new(&tape, &params, false);
        let pv = tape.constant(Tensor::new(&[rows, 36], enc_p).unwrap());
        let dv = tape.constant(Tensor::new(&[rows, 12], enc_d).unwrap());
        let (rgb, sigma) = field_forward_taped(&vars, &pv, &dv).unwrap();

        let taped_rgb = rgb.value();
        let taped_sigma = sigma.value();
        for i in 0..rows * 3 {
            assert_eq!(taped_rgb.data()[i].to_bits(), raw_rgb[i].to_bits(), "rgb {i}");
        }
        for i in 0..rows {
            assert_eq!(taped_sigma.data()[i].to_bits(), raw_sigma[i].to_bits(), "sigma {i}");
        }
    }

    #[test]
    fn batched_raw_forward_equals_per_row_evaluation() {
        // Row batching must not change any output bit; this is what lets callers
        // render in chunks of any size.
        let params = tiny_params(31);
        let pts = [[0.1, 0.2, 0.3], [-0.4, 0.0, 0.9], [0.7, -0.7, 0.1]];
        let dirs = [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        let enc_p = encode_position_rows(&pts, 6, 2.0).unwrap();
        let enc_d = encode_direction_rows(&dirs, 2).unwrap();
        let (batch_rgb, batch_sigma) = field_forward_raw(&params, &enc_p, &enc_d).unwrap();
        for i in 0..3 {
            let (rgb, sigma) =
                field_eval(&params, &enc_p[i * 36..(i + 1) * 36], &enc_d[i * 12..(i + 1) * 12], None)
                    .unwrap();
            for c in 0..3 {
                assert_eq!(rgb[c].to_bits(), batch_rgb[i * 3 + c].to_bits());
            }
            assert_eq!(sigma.to_bits(), batch_sigma[i].to_bits());
        }
    }

    #[test]
    fn noise_gradient_matches_finite_differences() {
        // f64 mirror of the raw forward for one row.
        fn mlp_f64(params: &RadianceFieldParams, input_pos: &[f64], enc_dir: &[f64]) -> ([f64; 3], f64) {
            let t = params.tensors();
            let lin = |x: &[f64], w: &Tensor, b: &Tensor| -> Vec<f64> {
                let (in_dim, out_dim) = (w.shape()[0], w.shape()[1]);
                let mut y = vec![0.0f64; out_dim];
                for (j, yj) in y.iter_mut().enumerate() {
                    let mut acc = 0.0f64;
                    for k in 0..in_dim {
                        acc += x[k] * f64::from(w.data()[k * out_dim + j]);
                    }
                    *yj = acc + f64::from(b.data()[j]);
                }
                y
            };
            let mut h = input_pos.to_vec();
            for layer in 0..N_TRUNK_LAYERS {
                h = lin(&h, &t[2 * layer], &t[2 * layer + 1]);
                for v in &mut h {
                    *v = v.max(0.0);
                }
            }
            let sigma = lin(&h, &t[8], &t[9])[0].max(0.0);
            let mut cat = h.clone();
            cat.extend_from_slice(enc_dir);
            let mut ch = lin(&cat, &t[10], &t[11]);
            for v in &mut ch {
                *v = v.max(0.0);
            }
            let o = lin(&ch, &t[12], &t[13]);
            let s = |x: f64| 1.0 / (1.0 + (-x).exp());
            ([s(o[0]), s(o[1]), s(o[2])], sigma)
        }

        let params = tiny_params(41);
        let enc_p = encode_position_rows(&[[0.25, -0.1, 0.4]], 6, 2.0).unwrap();
        let enc_d = encode_direction_rows(&[[0.0, 0.0, -1.0]], 2).unwrap();

        // Taped gradient of the red channel with respect to the noise row.
        let tape = Tape::new();
        let vars = FieldVars::new(&tape, &params, false);
        let noise = tape.leaf(Tensor::zeros(&[1, 36]).unwrap().with_requires_grad(true));
        let pv = tape.constant(Tensor::new(&[1, 36], enc_p.clone()).unwrap());
        let dv = tape.constant(Tensor::new(&[1, 12], enc_d.clone()).unwrap());
        let input = noise.add(&pv).unwrap();
        let (rgb, _) = field_forward_taped(&vars, &input, &dv).unwrap();
        let mask = tape.constant(Tensor::new(&[1, 3], vec![1.0, 0.0, 0.0]).unwrap());
        let root = rgb.mul(&mask).unwrap().sum_all();
        let grads = tape.backward(&root).unwrap();
        let g = grads.wrt(&noise).unwrap();

        let enc_p64: Vec<f64> = enc_p.iter().map(|&v| f64::from(v)).collect();
        let enc_d64: Vec<f64> = enc_d.iter().map(|&v| f64::from(v)).collect();
        let h = 1e-4;
        let mut checked = 0;
        for i in 0..36 {
            let bump = |delta: f64| {
                let mut x = enc_p64.clone();
                x[i] += delta;
                mlp_f64(&params, &x, &enc_d64).0[0]
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let got = f64::from(g.data()[i]);
            if fd.abs() > 1e-4 {
                let rel = (got - fd).abs() / fd.abs();
                assert!(rel <= 1e-3, "entry {i}: taped {got} vs fd {fd} (rel {rel})");
                checked += 1;
            }
        }
        assert!(checked >= 20, "only {checked} informative coordinates");
    }

    #[test]
    fn field_eval_rejects_mismatched_widths() {
        let params = tiny_params(1);
        let enc_p = vec![0.0; 36];
        let enc_d = vec![0.0; 12];
        assert!(field_eval(&params, &enc_p[..35], &enc_d, None).is_err());
        assert!(field_eval(&params, &enc_p, &enc_d[..11], None).is_err());
        assert!(field_eval(&params, &enc_p, &enc_d, Some(&enc_p[..35])).is_err());
        assert!(field_forward_raw(&params, &enc_p[..35], &enc_d).is_err());
    }
}
