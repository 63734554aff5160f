use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Architecture, NetworkConfig};
use super::dropout::dropout_factors;
use super::graph::{masked_softmax, Graph, NodeId};
use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;
use crate::corpus::WordId;
use crate::error::{Error, Result};
use crate::mixture::{mask_and_renormalize, MixtureWeights};
use crate::scalar::Scalar;

const INIT_SCALE: f64 = 0.1;

/// Input and output dimensions of a mixture-weight network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    /// Count features per row.
    pub features: usize,
    /// Previous-word embeddings per row (most recent last).
    pub context_words: usize,
    pub count_columns: usize,
    pub identity: bool,
    /// Vocabulary size `J`; the embedding table has `J + 1` rows.
    pub vocab_size: usize,
}

impl NetShape {
    pub fn outputs(&self) -> usize {
        self.count_columns + if self.identity { self.vocab_size } else { 0 }
    }
}

/// One batch of network inputs.
///
/// Feed-forward rows are independent. For the LSTM, rows are step-major:
/// the rows of step `t` are the first `steps[t]` sequences (sorted longest
/// first), so `steps` is non-increasing.
#[derive(Debug, Clone)]
pub struct NetInput<T> {
    pub features: Tensor<T>,
    /// `context_words` ids per row.
    pub words: Vec<WordId>,
    pub steps: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Ids {
    embedding: Option<ParamId>,
    w_in: ParamId,
    b_in: ParamId,
    w_rec: Option<ParamId>,
    w_out: ParamId,
    b_out: ParamId,
}

/// Feed-forward or LSTM network producing logits over mixture columns.
#[derive(Debug, Clone)]
pub struct LambdaNet<T> {
    config: NetworkConfig,
    shape: NetShape,
    params: ParamSet<T>,
    ids: Ids,
}

impl<T: Scalar> LambdaNet<T> {
    /// Builds a network with weights uniform in `[-0.1, 0.1]` and LSTM
    /// forget-gate biases at 1.
    pub fn new<R: Rng + ?Sized>(
        config: NetworkConfig,
        shape: NetShape,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (h, e) = (config.hidden_size, config.embedding_size);
        let input = shape.features + shape.context_words * e;
        if input == 0 || shape.outputs() == 0 {
            return Err(Error::InvalidArgument(
                "network has no inputs or no outputs".into(),
            ));
        }
        if config.architecture == Architecture::Lstm && shape.context_words > 1 {
            return Err(Error::InvalidArgument(
                "an LSTM step reads at most one previous word".into(),
            ));
        }
        let mut p = ParamSet::new();
        let embedding = (shape.context_words > 0)
            .then(|| p.add_uniform("embedding", shape.vocab_size + 1, e, INIT_SCALE, rng));
        let gates = match config.architecture {
            Architecture::Ff => 1,
            Architecture::Lstm => 4,
        };
        let w_in = p.add_uniform("w_in", input, gates * h, INIT_SCALE, rng);
        let b_in = p.add_uniform("b_in", 1, gates * h, INIT_SCALE, rng);
        let w_rec = (config.architecture == Architecture::Lstm)
            .then(|| p.add_uniform("w_rec", h, 4 * h, INIT_SCALE, rng));
        if config.architecture == Architecture::Lstm {
            p.value_mut(b_in).data_mut()[h..2 * h]
                .iter_mut()
                .for_each(|x| *x = T::one());
        }
        let w_out = p.add_uniform("w_out", h, shape.outputs(), INIT_SCALE, rng);
        let b_out = p.add_uniform("b_out", 1, shape.outputs(), INIT_SCALE, rng);
        Ok(LambdaNet {
            config,
            shape,
            params: p,
            ids: Ids {
                embedding,
                w_in,
                b_in,
                w_rec,
                w_out,
                b_out,
            },
        })
    }

    /// Reassembles a network from stored parameters, checking every shape.
    pub fn from_params(
        config: NetworkConfig,
        shape: NetShape,
        params: ParamSet<T>,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let template = LambdaNet::<T>::new(config.clone(), shape, &mut rng)?;
        if template.params.len() != params.len() {
            return Err(Error::format(
                "network parameters",
                "unexpected parameter count",
            ));
        }
        for (name, t) in template.params.iter() {
            let found = params.find(name).ok_or_else(|| {
                Error::format("network parameters", format!("missing parameter {name}"))
            })?;
            if params.value(found).shape() != t.shape() {
                return Err(Error::format(
                    "network parameters",
                    format!("parameter {name} has the wrong shape"),
                ));
            }
        }
        let find = |n: &str| params.find(n).expect("checked above");
        let ids = Ids {
            embedding: template.ids.embedding.map(|_| find("embedding")),
            w_in: find("w_in"),
            b_in: find("b_in"),
            w_rec: template.ids.w_rec.map(|_| find("w_rec")),
            w_out: find("w_out"),
            b_out: find("b_out"),
        };
        Ok(LambdaNet {
            config,
            shape,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Sets the output layer to zero, so every output starts uniform.
    pub fn zero_output(&mut self) {
        self.params.value_mut(self.ids.w_out).fill(T::zero());
        self.params.value_mut(self.ids.b_out).fill(T::zero());
    }

    fn check_input(&self, input: &NetInput<T>) -> Result<usize> {
        let rows = input.features.rows();
        if input.features.cols() != self.shape.features {
            return Err(Error::Shape(format!(
                "{} feature columns, network expects {}",
                input.features.cols(),
                self.shape.features
            )));
        }
        if input.words.len() != rows * self.shape.context_words {
            return Err(Error::Shape(
                "context word ids do not match the row count".into(),
            ));
        }
        if let Some(&w) = input
            .words
            .iter()
            .find(|&&w| w as usize > self.shape.vocab_size)
        {
            return Err(Error::WordOutOfRange {
                id: w as usize,
                size: self.shape.vocab_size + 1,
            });
        }
        if self.config.architecture == Architecture::Lstm {
            if input.steps.iter().sum::<usize>() != rows
                || input.steps.windows(2).any(|w| w[1] > w[0])
            {
                return Err(Error::Shape(
                    "LSTM step sizes must be non-increasing and cover every row".into(),
                ));
            }
        }
        Ok(rows)
    }

    /// Input layer for rows `start..start + n`.
    fn input_rows(
        &self,
        g: &mut Graph<T>,
        input: &NetInput<T>,
        start: usize,
        n: usize,
    ) -> Result<NodeId> {
        let cw = self.shape.context_words;
        let mut parts = Vec::with_capacity(cw + 1);
        if let Some(table) = self.ids.embedding {
            for pos in 0..cw {
                let ids = (start..start + n)
                    .map(|r| input.words[r * cw + pos])
                    .collect();
                parts.push(g.embed(&self.params, table, ids)?);
            }
        }
        if self.shape.features > 0 {
            let f = self.shape.features;
            let data = input.features.data()[start * f..(start + n) * f].to_vec();
            parts.push(g.input(Tensor::from_vec(n, f, data)));
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            g.concat_cols(parts)
        }
    }

    /// Hidden layer for every row. Dropout is applied when `rng` is given.
    pub fn hidden<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        input: &NetInput<T>,
        rng: Option<&mut R>,
    ) -> Result<NodeId> {
        let rows = self.check_input(input)?;
        let h = match self.config.architecture {
            Architecture::Ff => {
                let x = self.input_rows(g, input, 0, rows)?;
                let a = g.affine(&self.params, x, self.ids.w_in, Some(self.ids.b_in))?;
                g.tanh(a)
            }
            Architecture::Lstm => {
                let mut outputs = Vec::with_capacity(input.steps.len());
                let mut state: Option<(NodeId, NodeId)> = None;
                let mut start = 0;
                for &n in &input.steps {
                    let x = self.input_rows(g, input, start, n)?;
                    let (hn, cn) = self.lstm_cell(g, x, state, n)?;
                    outputs.push(hn);
                    state = Some((hn, cn));
                    start += n;
                }
                if outputs.len() == 1 {
                    outputs[0]
                } else {
                    g.concat_rows(outputs)?
                }
            }
        };
        match rng {
            Some(rng) if self.config.dropout_rate > 0.0 => {
                let len = g.value(h).len();
                let factors = dropout_factors(len, self.config.dropout_rate, rng);
                g.scale(h, factors)
            }
            _ => Ok(h),
        }
    }

    /// One LSTM step over `n` rows; the previous state is cut to its first
    /// `n` rows.
    fn lstm_cell(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        prev: Option<(NodeId, NodeId)>,
        n: usize,
    ) -> Result<(NodeId, NodeId)> {
        let hs = self.config.hidden_size;
        let w_rec = self.ids.w_rec.expect("LSTM has recurrent weights");
        let mut z = g.affine(&self.params, x, self.ids.w_in, Some(self.ids.b_in))?;
        let prev = match prev {
            Some((h, c)) => {
                let h = g.prefix(h, n)?;
                let c = g.prefix(c, n)?;
                let r = g.affine(&self.params, h, w_rec, None)?;
                z = g.add(z, r)?;
                Some(c)
            }
            None => None,
        };
        let i = g.cols(z, 0, hs)?;
        let i = g.sigmoid(i);
        let o = g.cols(z, 2 * hs, hs)?;
        let o = g.sigmoid(o);
        let cand = g.cols(z, 3 * hs, hs)?;
        let cand = g.tanh(cand);
        let mut c = g.mul(i, cand)?;
        if let Some(c_prev) = prev {
            let f = g.cols(z, hs, hs)?;
            let f = g.sigmoid(f);
            let keep = g.mul(f, c_prev)?;
            c = g.add(keep, c)?;
        }
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    /// Output logits for every row.
    pub fn logits<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        input: &NetInput<T>,
        rng: Option<&mut R>,
    ) -> Result<NodeId> {
        let h = self.hidden(g, input, rng)?;
        g.affine(&self.params, h, self.ids.w_out, Some(self.ids.b_out))
    }

    /// Evaluation-mode logits as a tensor.
    pub fn eval_logits(&self, input: &NetInput<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let out = self.logits::<ChaCha8Rng>(&mut g, input, None)?;
        Ok(g.value(out).clone())
    }

    /// `tanh(q W_q + b_q)` for a single feed-forward input vector.
    pub fn ff_forward(&self, q: &[T]) -> Result<Vec<T>> {
        if self.config.architecture != Architecture::Ff {
            return Err(Error::InvalidArgument("not a feed-forward network".into()));
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::row_vector(q.to_vec()));
        let a = g.affine(&self.params, x, self.ids.w_in, Some(self.ids.b_in))?;
        let h = g.tanh(a);
        Ok(g.value(h).data().to_vec())
    }

    /// One LSTM step from a raw input vector and `(h, cell)` state.
    pub fn lstm_step(&self, q: &[T], state: (&[T], &[T])) -> Result<(Vec<T>, Vec<T>)> {
        if self.config.architecture != Architecture::Lstm {
            return Err(Error::InvalidArgument("not an LSTM network".into()));
        }
        let hs = self.config.hidden_size;
        if state.0.len() != hs || state.1.len() != hs {
            return Err(Error::Shape(format!("LSTM state must have {hs} entries")));
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::row_vector(q.to_vec()));
        let h0 = g.input(Tensor::row_vector(state.0.to_vec()));
        let c0 = g.input(Tensor::row_vector(state.1.to_vec()));
        let (h, c) = self.lstm_cell(&mut g, x, Some((h0, c0)), 1)?;
        Ok((g.value(h).data().to_vec(), g.value(c).data().to_vec()))
    }
}

/// Softmax of `h W_s + b_s`, with masked columns zeroed and the rest
/// renormalized.
pub fn output_lambda<T: Scalar>(
    h: &[T],
    w_s: &Tensor<T>,
    b_s: &[T],
    valid: &[bool],
) -> Result<MixtureWeights<T>> {
    if w_s.rows() != h.len() || w_s.cols() != b_s.len() {
        return Err(Error::Shape(format!(
            "hidden of length {} against output weights {:?}",
            h.len(),
            w_s.shape()
        )));
    }
    let mut z = b_s.to_vec();
    for (i, &hi) in h.iter().enumerate() {
        for (zj, &w) in z.iter_mut().zip(w_s.row(i)) {
            *zj += hi * w;
        }
    }
    let soft = masked_softmax(&z, &vec![true; z.len()]);
    mask_and_renormalize(&soft, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::config::InputFeatures;

    fn config(arch: Architecture, h: usize) -> NetworkConfig {
        NetworkConfig {
            architecture: arch,
            hidden_size: h,
            embedding_size: h,
            input_features: InputFeatures::C,
            dropout_rate: 0.0,
            block_dropout_rate: 0.0,
        }
    }

    fn shape(features: usize) -> NetShape {
        NetShape {
            features,
            context_words: 0,
            count_columns: 2,
            identity: false,
            vocab_size: 3,
        }
    }

    #[test]
    fn ff_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net =
            LambdaNet::<f64>::new(config(Architecture::Ff, 1), shape(1), &mut rng).unwrap();
        let p = net.params_mut();
        p.value_mut(p.find("w_in").unwrap()).data_mut()[0] = 1.0;
        p.value_mut(p.find("b_in").unwrap()).data_mut()[0] = 0.0;
        assert_eq!(net.ff_forward(&[0.0]).unwrap(), vec![0.0]);
        assert!((net.ff_forward(&[1.0]).unwrap()[0] - 0.761_594_155_955_764_9).abs() < 1e-12);
        assert!(net.ff_forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn lstm_step_matches_gate_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net =
            LambdaNet::<f64>::new(config(Architecture::Lstm, 1), shape(1), &mut rng).unwrap();
        // gate order: input, forget, output, candidate
        let (wx, wh, b) = (
            [0.5, -0.3, 0.8, 1.2],
            [0.1, 0.2, -0.4, 0.7],
            [0.0, 1.0, 0.1, -0.2],
        );
        let p = net.params_mut();
        p.value_mut(p.find("w_in").unwrap())
            .data_mut()
            .copy_from_slice(&wx);
        p.value_mut(p.find("w_rec").unwrap())
            .data_mut()
            .copy_from_slice(&wh);
        p.value_mut(p.find("b_in").unwrap())
            .data_mut()
            .copy_from_slice(&b);
        let (x, h0, c0) = (0.9, -0.5, 0.3);
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z: Vec<f64> = (0..4).map(|k| wx[k] * x + wh[k] * h0 + b[k]).collect();
        let c = s(z[1]) * c0 + s(z[0]) * z[3].tanh();
        let h = s(z[2]) * c.tanh();
        let (hn, cn) = net.lstm_step(&[x], (&[h0], &[c0])).unwrap();
        assert!((hn[0] - h).abs() < 1e-14 && (cn[0] - c).abs() < 1e-14);
    }

    #[test]
    fn zero_lstm_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net =
            LambdaNet::<f64>::new(config(Architecture::Lstm, 2), shape(2), &mut rng).unwrap();
        let p = net.params_mut();
        for i in 0..p.len() {
            p.value_mut(i).fill(0.0);
        }
        let (h, c) = net
            .lstm_step(&[0.3, -1.0], (&[0.0, 0.0], &[0.0, 0.0]))
            .unwrap();
        assert_eq!((h, c), (vec![0.0, 0.0], vec![0.0, 0.0]));
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = LambdaNet::<f64>::new(config(Architecture::Lstm, 3), shape(2), &mut rng).unwrap();
        let b = net.params().value(net.params().find("b_in").unwrap());
        assert_eq!(&b.data()[3..6], &[1.0, 1.0, 1.0]);
        assert!(b.data()[..3].iter().all(|x| x.abs() <= 0.1));
    }

    #[test]
    fn output_lambda_examples() {
        let w = Tensor::zeros(1, 4);
        let u = output_lambda(&[1.0f64], &w, &[0.0; 4], &[true; 4]).unwrap();
        assert_eq!(u.values(), &[0.25; 4]);
        let w = Tensor::zeros(1, 2);
        let l = output_lambda(&[0.0f64], &w, &[2f64.ln(), 0.0], &[true, true]).unwrap();
        assert!((l.values()[0] - 2.0 / 3.0).abs() < 1e-15);
        let m = output_lambda(&[0.0f64], &w, &[3.0, -7.0], &[false, true]).unwrap();
        assert_eq!(m.values(), &[0.0, 1.0]);
    }

    #[test]
    fn lstm_batch_matches_single_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sh = NetShape {
            features: 1,
            context_words: 1,
            count_columns: 2,
            identity: true,
            vocab_size: 3,
        };
        let net = LambdaNet::<f64>::new(config(Architecture::Lstm, 3), sh, &mut rng).unwrap();
        // sequence A: 3 steps, sequence B: 1 step, step-major rows A0 B0 A1 A2
        let batch = NetInput {
            features: Tensor::from_vec(4, 1, vec![0.1, 0.2, 0.3, 0.4]),
            words: vec![3, 3, 0, 2],
            steps: vec![2, 1, 1],
        };
        let all = net.eval_logits(&batch).unwrap();
        let a = NetInput {
            features: Tensor::from_vec(3, 1, vec![0.1, 0.3, 0.4]),
            words: vec![3, 0, 2],
            steps: vec![1, 1, 1],
        };
        let b = NetInput {
            features: Tensor::from_vec(1, 1, vec![0.2]),
            words: vec![3],
            steps: vec![1],
        };
        let la = net.eval_logits(&a).unwrap();
        let lb = net.eval_logits(&b).unwrap();
        for (x, y) in all.row(0).iter().zip(la.row(0)) {
            assert!((x - y).abs() < 1e-14);
        }
        for (x, y) in all.row(1).iter().zip(lb.row(0)) {
            assert!((x - y).abs() < 1e-14);
        }
        for (x, y) in all.row(3).iter().zip(la.row(2)) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
