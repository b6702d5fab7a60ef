use std::ops::Index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Real, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered list of named parameter shapes, filled in while a model is built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique within a layout.
    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> ParamId {
        let name = name.into();
        assert!(
            self.specs.iter().all(|s| s.name != name),
            "duplicate parameter name {name}"
        );
        self.specs.push(ParamSpec { name, shape, init });
        ParamId(self.specs.len() - 1)
    }

    pub fn linear(&mut self, name: &str, c_in: usize, c_out: usize) -> Linear {
        let weight = self.add(
            format!("{name}.weight"),
            vec![c_in, c_out],
            Init::Glorot {
                fan_in: c_in,
                fan_out: c_out,
            },
        );
        let bias = self.add(format!("{name}.bias"), vec![c_out], Init::Zeros);
        Linear {
            weight,
            bias,
            c_in,
            c_out,
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }
}

/// Handles of a shared affine map `x·W + b` with `W: [c_in, c_out]`, `b: [c_out]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Linear {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, bound[self.weight], Some(bound[self.bias]))
    }
}

/// Parameter values recorded on a tape for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Named parameter values, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
}

impl<T: Real> ParamStore<T> {
    /// Seeded initialisation. The draw happens in `f64`, so `f32` and `f64`
    /// stores built from one seed agree up to rounding.
    pub fn init(layout: &ParamLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(layout.len());
        for spec in layout.specs() {
            let n = spec.numel();
            let v = match spec.init {
                Init::Glorot { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n)
                        .map(|_| T::cast(rng.random::<f64>() * 2.0 * a - a))
                        .collect()
                }
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
            };
            values.push(v);
        }
        Self {
            names: layout.specs().iter().map(|s| s.name.clone()).collect(),
            shapes: layout.specs().iter().map(|s| s.shape.clone()).collect(),
            values,
        }
    }

    pub fn from_parts(names: Vec<String>, shapes: Vec<Vec<usize>>, values: Vec<Vec<T>>) -> Result<Self> {
        if names.len() != shapes.len() || names.len() != values.len() {
            return Err(Error::InvalidArgument("parameter part counts differ".into()));
        }
        for ((name, shape), value) in names.iter().zip(&shapes).zip(&values) {
            if shape.iter().product::<usize>() != value.len() {
                return Err(Error::Shape {
                    op: "param",
                    left: shape.clone(),
                    right: vec![value.len()],
                });
            }
            if names.iter().filter(|n| *n == name).count() > 1 {
                return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
            }
        }
        Ok(Self {
            names,
            shapes,
            values,
        })
    }

    /// Checks that names and shapes agree with a layout.
    pub fn matches(&self, layout: &ParamLayout) -> bool {
        self.names.len() == layout.len()
            && layout
                .specs()
                .iter()
                .zip(self.names.iter().zip(&self.shapes))
                .all(|(s, (n, sh))| &s.name == n && &s.shape == sh)
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Result<Bound> {
        let vars = self
            .shapes
            .iter()
            .zip(&self.values)
            .map(|(s, v)| tape.param(s.clone(), v.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound(vars))
    }

    /// Gradients for every parameter after `tape.backward`.
    pub fn gradients(&self, tape: &Tape<T>, bound: &Bound) -> Vec<Vec<T>> {
        bound
            .0
            .iter()
            .zip(&self.values)
            .map(|(&v, val)| {
                tape.grad(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); val.len()])
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn value(&self, i: usize) -> &[T] {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.values[i]
    }

    pub fn values(&self) -> &[Vec<T>] {
        &self.values
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|&x| U::cast(x.as_f64())).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut layout = ParamLayout::new();
        let lin = layout.linear("fc", 10, 6);
        let store = ParamStore::<f64>::init(&layout, 7);
        let a = (6.0f64 / 16.0).sqrt();
        assert!(store.value(lin.weight.index()).iter().all(|w| w.abs() <= a));
        assert!(store.value(lin.bias.index()).iter().all(|&b| b == 0.0));
        assert_eq!(layout.num_scalars(), 66);
    }

    #[test]
    fn init_is_seeded() {
        let mut layout = ParamLayout::new();
        layout.linear("a", 4, 4);
        let s1 = ParamStore::<f32>::init(&layout, 3);
        let s2 = ParamStore::<f32>::init(&layout, 3);
        let s3 = ParamStore::<f32>::init(&layout, 4);
        assert_eq!(s1, s2);
        assert_ne!(s1, s3);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut layout = ParamLayout::new();
        layout.linear("a", 1, 1);
        layout.linear("a", 1, 1);
    }
}
