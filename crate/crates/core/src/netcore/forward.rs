use bitvec::prelude::*;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{active, NetworkParams};
use crate::error::{Error, Result};

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub input: Array1<f64>,
    /// `g_0..g_L`
    pub g: Vec<Array1<f64>>,
    /// `h_0..h_L`
    pub h: Vec<Array1<f64>>,
    /// Active-unit patterns `D_0..D_L`.
    pub signs: Vec<BitVec>,
    pub output: Array1<f64>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.h.len() - 1
    }

    /// `h_{l-1}` with `h_{-1}` meaning the input; takes `l` in `0..=L`.
    pub fn layer_input(&self, l: usize) -> ArrayView1<'_, f64> {
        if l == 0 {
            self.input.view()
        } else {
            self.h[l - 1].view()
        }
    }
}

/// Column-wise traces of a batch (`dim × n`).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTrace {
    pub inputs: Array2<f64>,
    pub g: Vec<Array2<f64>>,
    pub h: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl BatchTrace {
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn depth(&self) -> usize {
        self.h.len() - 1
    }

    pub fn layer_input(&self, l: usize) -> ArrayView2<'_, f64> {
        if l == 0 {
            self.inputs.view()
        } else {
            self.h[l - 1].view()
        }
    }

    pub fn sample(&self, i: usize) -> ForwardTrace {
        let col = |m: &Array2<f64>| m.column(i).to_owned();
        ForwardTrace {
            input: col(&self.inputs),
            g: self.g.iter().map(col).collect(),
            h: self.h.iter().map(col).collect(),
            signs: self
                .g
                .iter()
                .map(|g| g.column(i).iter().map(|v| active(*v)).collect())
                .collect(),
            output: col(&self.output),
        }
    }

    pub fn samples(&self) -> Vec<ForwardTrace> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }

    pub fn from_traces(traces: &[ForwardTrace]) -> Result<Self> {
        let first = traces
            .first()
            .ok_or_else(|| Error::Dimension("at least one trace is required".into()))?;
        let stack = |get: &dyn Fn(&ForwardTrace) -> ArrayView1<f64>| -> Result<Array2<f64>> {
            let len = get(first).len();
            let mut out = Array2::zeros((len, traces.len()));
            for (i, t) in traces.iter().enumerate() {
                let v = get(t);
                if v.len() != len {
                    return Err(Error::Dimension("traces of different shapes".into()));
                }
                out.column_mut(i).assign(&v);
            }
            Ok(out)
        };
        let depth = first.depth();
        if traces.iter().any(|t| t.depth() != depth) {
            return Err(Error::Dimension("traces of different depth".into()));
        }
        Ok(Self {
            inputs: stack(&|t| t.input.view())?,
            g: (0..=depth).map(|l| stack(&|t| t.g[l].view())).collect::<Result<_>>()?,
            h: (0..=depth).map(|l| stack(&|t| t.h[l].view())).collect::<Result<_>>()?,
            output: stack(&|t| t.output.view())?,
        })
    }
}

fn check_finite(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Forward pass for a batch whose rows are samples (`n × input_dim`).
pub fn forward_batch(params: &NetworkParams, inputs: ArrayView2<f64>) -> Result<BatchTrace> {
    let arch = params.arch();
    if inputs.ncols() != arch.input_dim {
        return Err(Error::Dimension(format!(
            "input has {} coordinates, network expects {}",
            inputs.ncols(),
            arch.input_dim
        )));
    }
    let x = inputs.t().to_owned();
    check_finite(&x, "input")?;
    let mut g = Vec::with_capacity(arch.depth + 1);
    let mut h: Vec<Array2<f64>> = Vec::with_capacity(arch.depth + 1);
    for l in 0..=arch.depth {
        let prev = if l == 0 { x.view() } else { h[l - 1].view() };
        let gl = params.pre_activation(l, prev);
        check_finite(&gl, &format!("pre-activation of layer {l}"))?;
        h.push(gl.mapv(|v| v.max(0.0)));
        g.push(gl);
    }
    let output = params.output_matrix().dot(&h[arch.depth]);
    check_finite(&output, "network output")?;
    Ok(BatchTrace {
        inputs: x,
        g,
        h,
        output,
    })
}

pub fn forward(params: &NetworkParams, x: ArrayView1<f64>) -> Result<ForwardTrace> {
    let batch = forward_batch(params, x.insert_axis(ndarray::Axis(0)))?;
    Ok(batch.sample(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{init_network, ArchSpec};
    use ndarray::{array, Array2};

    fn hand_net() -> NetworkParams {
        let arch = ArchSpec::fully_connected(3, 3, 1, 1);
        let a = array![[1.0, 0.0, -1.0], [0.5, 2.0, 0.0], [-1.0, 1.0, 1.0]];
        let w = array![[1.0, -1.0, 0.0], [0.0, 1.0, 1.0], [2.0, 0.0, -1.0]];
        let b = array![[1.0, 2.0, -1.0]];
        NetworkParams::from_parts(arch, 0, vec![a, w], b, vec![]).unwrap()
    }

    #[test]
    fn hand_computed_three_by_three() {
        let p = hand_net();
        let x = array![1.0, 2.0, 3.0];
        let t = forward(&p, x.view()).unwrap();
        // g0 = (-2, 4.5, 4) -> h0 = (0, 4.5, 4)
        assert_eq!(t.h[0], array![0.0, 4.5, 4.0]);
        // g1 = (-4.5, 8.5, -4) -> h1 = (0, 8.5, 0); y = 17
        assert_eq!(t.g[1], array![-4.5, 8.5, -4.0]);
        assert_eq!(t.output, array![17.0]);
        assert_eq!(t.signs[1].iter().by_vals().collect::<Vec<_>>(), vec![false, true, false]);
    }

    #[test]
    fn zero_network_is_all_active() {
        let arch = ArchSpec::fully_connected(3, 4, 2, 2);
        let z = |r, c| Array2::zeros((r, c));
        let p = NetworkParams::from_parts(arch, 0, vec![z(4, 3), z(4, 4), z(4, 4)], z(2, 4), vec![]).unwrap();
        let t = forward(&p, array![0.3, -0.2, 0.7].view()).unwrap();
        assert_eq!(t.output, array![0.0, 0.0]);
        assert!(t.signs.iter().all(|s| s.all()));
    }

    #[test]
    fn activations_are_relu_of_preactivations() {
        let arch = ArchSpec::fully_connected(4, 32, 3, 3);
        let p = init_network(&arch, 9).unwrap();
        let x = array![0.5, -0.1, 0.2, std::f64::consts::FRAC_1_SQRT_2];
        let t = forward(&p, x.view()).unwrap();
        for l in 0..=3 {
            for k in 0..32 {
                let expected = if t.signs[l][k] { t.g[l][k] } else { 0.0 };
                assert_eq!(t.h[l][k], expected);
                assert!(t.h[l][k] >= 0.0);
            }
        }
        let y = p.output_matrix().dot(&t.h[3]);
        assert!((&t.output - &y).iter().all(|e| e.abs() < 1e-13));
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let p = hand_net();
        assert!(matches!(forward(&p, array![1.0, 2.0].view()), Err(Error::Dimension(_))));
        assert!(matches!(
            forward(&p, array![1.0, f64::NAN, 0.0].view()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn batch_matches_single() {
        let arch = ArchSpec::fully_connected(3, 16, 2, 2);
        let p = init_network(&arch, 1).unwrap();
        let xs = array![[0.1, 0.2, 0.7], [-0.3, 0.4, 0.7]];
        let batch = forward_batch(&p, xs.view()).unwrap();
        for i in 0..2 {
            let single = forward(&p, xs.row(i)).unwrap();
            let from_batch = batch.sample(i);
            for l in 0..=2 {
                for k in 0..16 {
                    assert!((single.h[l][k] - from_batch.h[l][k]).abs() < 1e-14);
                }
            }
        }
        let rebuilt = BatchTrace::from_traces(&batch.samples()).unwrap();
        assert_eq!(rebuilt, batch);
    }
}
