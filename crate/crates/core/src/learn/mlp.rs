use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LearnError;

const LN_EPS: f64 = 1e-5;

/// Dense ReLU network with optional layer norm after every hidden linear layer.
///
/// Parameters live in one flat vector. Per layer: weights `(out, in)`
/// row-major, bias `(out)`, then layer-norm gain and shift `(out)` on hidden
/// layers when enabled. The output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    layer_norm: bool,
    params: Vec<f64>,
}

/// Intermediate values kept by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Array2<f64>>,
    normed: Vec<Array2<f64>>,
    inv_std: Vec<Array1<f64>>,
    pre_relu: Vec<Array2<f64>>,
}

struct Offsets {
    w: usize,
    b: usize,
    ln: Option<usize>,
}

impl Mlp {
    /// Fan-in scaled uniform weights, zero biases, unit layer-norm gains.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], layer_norm: bool, rng: &mut R) -> Result<Self, LearnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(LearnError::Shape(format!("invalid layer dims {dims:?}")));
        }
        let mut net = Mlp { dims: dims.to_vec(), layer_norm, params: Vec::new() };
        net.params = vec![0.0; net.expected_len()];
        for l in 0..net.n_layers() {
            let o = net.offsets(l);
            let bound = 1.0 / (dims[l] as f64).sqrt();
            for p in &mut net.params[o.w..o.b] {
                *p = rng.gen_range(-bound..bound);
            }
            if let Some(ln) = o.ln {
                for p in &mut net.params[ln..ln + dims[l + 1]] {
                    *p = 1.0;
                }
            }
        }
        Ok(net)
    }

    pub fn from_params(dims: &[usize], layer_norm: bool, params: Vec<f64>) -> Result<Self, LearnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(LearnError::Shape(format!("invalid layer dims {dims:?}")));
        }
        let net = Mlp { dims: dims.to_vec(), layer_norm, params };
        if net.params.len() != net.expected_len() {
            return Err(LearnError::Shape(format!(
                "{} parameters for dims {dims:?}, expected {}",
                net.params.len(),
                net.expected_len()
            )));
        }
        Ok(net)
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn is_hidden(&self, l: usize) -> bool {
        l + 1 < self.n_layers()
    }

    fn offsets(&self, l: usize) -> Offsets {
        let mut off = 0;
        for k in 0..self.n_layers() {
            let (i, o) = (self.dims[k], self.dims[k + 1]);
            let w = off;
            let b = w + i * o;
            let ln = (self.layer_norm && self.is_hidden(k)).then_some(b + o);
            if k == l {
                return Offsets { w, b, ln };
            }
            off = b + o + if ln.is_some() { 2 * o } else { 0 };
        }
        unreachable!("layer index out of range")
    }

    fn expected_len(&self) -> usize {
        (0..self.n_layers())
            .map(|l| {
                let (i, o) = (self.dims[l], self.dims[l + 1]);
                i * o + o + if self.layer_norm && self.is_hidden(l) { 2 * o } else { 0 }
            })
            .sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layer_norm(&self) -> bool {
        self.layer_norm
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let o = self.offsets(l);
        ArrayView2::from_shape((self.dims[l + 1], self.dims[l]), &self.params[o.w..o.b]).expect("layout")
    }

    fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let o = self.offsets(l);
        ArrayView1::from(&self.params[o.b..o.b + self.dims[l + 1]])
    }

    fn ln_params(&self, l: usize) -> Option<(ArrayView1<'_, f64>, ArrayView1<'_, f64>)> {
        let o = self.offsets(l);
        let n = self.dims[l + 1];
        o.ln.map(|ln| (ArrayView1::from(&self.params[ln..ln + n]), ArrayView1::from(&self.params[ln + n..ln + 2 * n])))
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<(), LearnError> {
        if x.ncols() != self.input_dim() {
            return Err(LearnError::Shape(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, LearnError> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row");
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Cache), LearnError> {
        self.check_input(&x)?;
        let mut cache = Cache { inputs: Vec::new(), normed: Vec::new(), inv_std: Vec::new(), pre_relu: Vec::new() };
        let mut h = x.to_owned();
        for l in 0..self.n_layers() {
            let mut z = h.dot(&self.weight(l).t());
            z += &self.bias(l);
            cache.inputs.push(h);
            if !self.is_hidden(l) {
                return Ok((z, cache));
            }
            if let Some((g, beta)) = self.ln_params(l) {
                let n = z.ncols() as f64;
                let mean = z.sum_axis(Axis(1)) / n;
                let centered = &z - &mean.view().insert_axis(Axis(1));
                let var = centered.mapv(|c| c * c).sum_axis(Axis(1)) / n;
                let inv = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
                let normed = &centered * &inv.view().insert_axis(Axis(1));
                z = &normed * &g + beta;
                cache.normed.push(normed);
                cache.inv_std.push(inv);
            }
            h = z.mapv(|v| v.max(0.0));
            cache.pre_relu.push(z);
        }
        unreachable!("output layer returns")
    }

    /// Gradients of `sum(dy * y)` with respect to the parameters and the input.
    pub fn backward(&self, cache: &Cache, dy: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Array2<f64>), LearnError> {
        if dy.ncols() != self.output_dim() || dy.nrows() != cache.inputs[0].nrows() {
            return Err(LearnError::Shape("upstream gradient shape does not match the cached batch".into()));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut dz = dy.to_owned();
        for l in (0..self.n_layers()).rev() {
            let o = self.offsets(l);
            if self.is_hidden(l) {
                // dz currently holds d/d(relu output).
                let pre = &cache.pre_relu[l];
                dz.zip_mut_with(pre, |d, p| {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                });
                if let Some((g, _)) = self.ln_params(l) {
                    let normed = &cache.normed[l];
                    let inv = &cache.inv_std[l];
                    let ln = o.ln.expect("ln offsets");
                    let n = self.dims[l + 1];
                    let dg = (&dz * normed).sum_axis(Axis(0));
                    let dbeta = dz.sum_axis(Axis(0));
                    grads[ln..ln + n].copy_from_slice(dg.as_slice().expect("contiguous"));
                    grads[ln + n..ln + 2 * n].copy_from_slice(dbeta.as_slice().expect("contiguous"));
                    let dn = &dz * &g;
                    let h = n as f64;
                    let sum_dn = dn.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let sum_dn_n = (&dn * normed).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let inner = &dn * h - &sum_dn - &(normed * &sum_dn_n);
                    dz = inner * &(inv / h).insert_axis(Axis(1));
                }
            }
            let h = &cache.inputs[l];
            let dw = dz.t().dot(h);
            let db = dz.sum_axis(Axis(0));
            grads[o.w..o.b].copy_from_slice(dw.as_standard_layout().as_slice().expect("contiguous"));
            grads[o.b..o.b + self.dims[l + 1]].copy_from_slice(db.as_slice().expect("contiguous"));
            dz = dz.dot(&self.weight(l));
        }
        Ok((grads, dz))
    }

    /// `target <- eta * online + (1 - eta) * target`.
    pub fn polyak_from(&mut self, online: &Mlp, eta: f64) {
        debug_assert_eq!(self.params.len(), online.params.len());
        if eta == 1.0 {
            self.params.copy_from_slice(&online.params);
            return;
        }
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = eta * o + (1.0 - eta) * *t;
        }
    }

    /// First output column as a vector.
    pub fn column(y: &Array2<f64>) -> Vec<f64> {
        y.slice(s![.., 0]).to_vec()
    }
}
