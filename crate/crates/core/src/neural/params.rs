use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type ParamId = usize;

/// Named trainable tensors with their gradient slots.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.grads.push(Tensor::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name);
        self.values.len() - 1
    }

    /// Adds a parameter initialized uniformly in `[-scale, scale]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| T::of(rng.gen_range(-scale..=scale)))
            .collect();
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id]
    }

    pub(crate) fn split_mut(&mut self) -> (&[Tensor<T>], &mut [Tensor<T>]) {
        (&self.values, &mut self.grads)
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> (&mut [Tensor<T>], &[Tensor<T>], &[String]) {
        (&mut self.values, &self.grads, &self.names)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(T::zero());
        }
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn grad_norm(&self) -> T {
        self.grads.iter().map(Tensor::sum_squares).sum::<T>().sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let norm = self.grad_norm();
        if norm > max_norm {
            let s = max_norm / norm;
            for g in &mut self.grads {
                g.data_mut().iter_mut().for_each(|x| *x *= s);
            }
        }
        norm
    }

    /// Fails on the first parameter with a non-finite gradient entry.
    pub fn check_grads_finite(&self) -> Result<()> {
        for (name, g) in self.names.iter().zip(&self.grads) {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Appends every parameter as a named blob: name length (u16), name,
    /// rows (u32), cols (u32), then little-endian f64 values.
    pub fn write_blobs(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, t) in self.iter() {
            write_blob(out, name, t);
        }
    }

    pub fn read_blobs(input: &mut &[u8]) -> Result<Self> {
        let n = read_u32(input)? as usize;
        let mut set = ParamSet::new();
        for _ in 0..n {
            let (name, t) = read_blob(input)?;
            if set.find(&name).is_some() {
                return Err(Error::format(
                    "parameter container",
                    format!("duplicate blob {name}"),
                ));
            }
            set.add(name, t);
        }
        Ok(set)
    }
}

pub(crate) fn write_blob<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for &x in t.data() {
        out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
    }
}

pub(crate) fn read_blob<T: Scalar>(input: &mut &[u8]) -> Result<(String, Tensor<T>)> {
    let len = u16::from_le_bytes(take::<2>(input)?) as usize;
    if input.len() < len {
        return Err(Error::format("parameter container", "truncated blob name"));
    }
    let name = String::from_utf8(input[..len].to_vec())
        .map_err(|_| Error::format("parameter container", "blob name is not UTF-8"))?;
    *input = &input[len..];
    let rows = read_u32(input)? as usize;
    let cols = read_u32(input)? as usize;
    let n = rows
        .checked_mul(cols)
        .filter(|&n| n.saturating_mul(8) <= input.len())
        .ok_or_else(|| Error::format("parameter container", format!("truncated blob {name}")))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(T::of(f64::from_le_bytes(take::<8>(input)?)));
    }
    Ok((name, Tensor::from_vec(rows, cols, data)))
}

pub(crate) fn read_u32(input: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take::<4>(input)?))
}

pub(crate) fn take<const N: usize>(input: &mut &[u8]) -> Result<[u8; N]> {
    if input.len() < N {
        return Err(Error::format(
            "parameter container",
            "unexpected end of data",
        ));
    }
    let (head, rest) = input.split_at(N);
    *input = rest;
    Ok(head.try_into().expect("split at N"))
}
