//! Forward context, parameter registration and the small layers every module shares.

use std::cell::RefCell;
use std::ops::Deref;

use mrrawnet_tensor::{BufferId, Conv1dSpec, Mode, ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Everything one forward pass needs: the tape, read-only parameters and the
/// norm mode. Batch-norm running statistics are queued rather than written so
/// the parameter tree stays shared.
pub struct Session<'a> {
    pub tape: TapeRef<'a>,
    pub store: &'a ParamStore,
    pub mode: Mode,
    updates: RefCell<Vec<(BufferId, Tensor)>>,
    trace: RefCell<Vec<(String, Vec<usize>)>>,
    flags: RefCell<Vec<String>>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        Self::with_tape(TapeRef::Owned(Tape::new()), store, mode)
    }

    /// Records onto an existing tape.
    pub fn on_tape(tape: &'a Tape, store: &'a ParamStore, mode: Mode) -> Self {
        Self::with_tape(TapeRef::Borrowed(tape), store, mode)
    }

    fn with_tape(tape: TapeRef<'a>, store: &'a ParamStore, mode: Mode) -> Self {
        Self {
            tape,
            store,
            mode,
            updates: RefCell::default(),
            trace: RefCell::default(),
            flags: RefCell::default(),
        }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.tape.shape(v)
    }

    pub(crate) fn record(&self, name: &str, v: Var) {
        self.trace.borrow_mut().push((name.to_owned(), self.tape.shape(v)));
    }

    pub(crate) fn flag(&self, msg: impl Into<String>) {
        self.flags.borrow_mut().push(msg.into());
    }

    /// Named feature shapes recorded during the forward pass.
    pub fn trace(&self) -> Vec<(String, Vec<usize>)> {
        self.trace.borrow().clone()
    }

    /// Non-fatal input adjustments made during the forward pass.
    pub fn flags(&self) -> Vec<String> {
        self.flags.borrow().clone()
    }

    pub fn take_updates(&self) -> Vec<(BufferId, Tensor)> {
        std::mem::take(&mut self.updates.borrow_mut())
    }
}

pub enum TapeRef<'a> {
    Owned(Tape),
    Borrowed(&'a Tape),
}

impl Deref for TapeRef<'_> {
    type Target = Tape;

    fn deref(&self) -> &Tape {
        match self {
            Self::Owned(t) => t,
            Self::Borrowed(t) => t,
        }
    }
}

/// Registers parameters under a path prefix, drawing initial values from one RNG stream.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> Builder<'_> {
        let prefix = self.path(name);
        Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_owned()
        } else {
            format!("{}/{name}", self.prefix)
        }
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        let path = self.path(name);
        Ok(self.store.add_param(path, value)?)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor) -> Result<BufferId> {
        let path = self.path(name);
        Ok(self.store.add_buffer(path, value)?)
    }

    /// `U(−1/√fan_in, 1/√fan_in)`.
    pub fn fan_in(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.param(name, t)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub spec: Conv1dSpec,
}

impl Conv {
    pub fn new(
        b: &mut Builder,
        name: &str,
        (cin, cout, k): (usize, usize, usize),
        spec: Conv1dSpec,
        bias: bool,
    ) -> Result<Self> {
        let mut b = b.sub(name);
        let fan = cin / spec.groups * k;
        let w = b.fan_in("weight", vec![cout, cin / spec.groups, k], fan)?;
        let bias = if bias {
            Some(b.param("bias", Tensor::zeros([cout]))?)
        } else {
            None
        };
        Ok(Self { w, b: bias, spec })
    }

    /// Kernel-size-1 projection.
    pub fn pointwise(b: &mut Builder, name: &str, cin: usize, cout: usize, bias: bool) -> Result<Self> {
        Self::new(b, name, (cin, cout, 1), Conv1dSpec::default(), bias)
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        let b = self.b.map(|b| s.p(b));
        Ok(s.tape.conv1d(x, s.p(self.w), b, self.spec)?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(b: &mut Builder, name: &str, din: usize, dout: usize) -> Result<Self> {
        let mut b = b.sub(name);
        Ok(Self {
            w: b.fan_in("weight", vec![dout, din], din)?,
            b: b.param("bias", Tensor::zeros([dout]))?,
        })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        Ok(s.tape.linear(x, s.p(self.w), Some(s.p(self.b)))?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: BufferId,
    pub var: BufferId,
}

impl BatchNorm {
    pub fn new(b: &mut Builder, name: &str, c: usize) -> Result<Self> {
        let mut b = b.sub(name);
        Ok(Self {
            gamma: b.param("gamma", Tensor::ones([c]))?,
            beta: b.param("beta", Tensor::zeros([c]))?,
            mean: b.buffer("running_mean", Tensor::zeros([c]))?,
            var: b.buffer("running_var", Tensor::ones([c]))?,
        })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        let running = (s.store.buffer(self.mean), s.store.buffer(self.var));
        let (y, stats) = s
            .tape
            .batch_norm(x, s.p(self.gamma), s.p(self.beta), running, s.mode)?;
        if let Some((m, v)) = stats {
            let mut u = s.updates.borrow_mut();
            u.push((self.mean, m));
            u.push((self.var, v));
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct GlobalLayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl GlobalLayerNorm {
    pub fn new(b: &mut Builder, name: &str, c: usize) -> Result<Self> {
        let mut b = b.sub(name);
        Ok(Self {
            gamma: b.param("gamma", Tensor::ones([c]))?,
            beta: b.param("beta", Tensor::zeros([c]))?,
        })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        Ok(s.tape.global_layer_norm(x, s.p(self.gamma), s.p(self.beta))?)
    }
}

/// Per-channel learnable leaky slope, initialised to 0.25.
#[derive(Clone, Debug)]
pub struct Prelu {
    pub a: ParamId,
}

impl Prelu {
    pub fn new(b: &mut Builder, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            a: b.param(name, Tensor::full([c], 0.25))?,
        })
    }

    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        Ok(s.tape.prelu(x, s.p(self.a))?)
    }
}

/// Sums parameter scalars by their first path component, in registration order.
pub fn count_by_module(store: &ParamStore) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for p in store.params() {
        let top = p.name.split('/').next().unwrap_or_default();
        match out.iter_mut().find(|(n, _)| n == top) {
            Some((_, c)) => *c += p.value.numel(),
            None => out.push((top.to_owned(), p.value.numel())),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn builder_paths_and_init_bounds() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Builder::new(&mut store, &mut rng);
        let conv = Conv::new(&mut b.sub("fe1"), "proj", (16, 8, 3), Conv1dSpec::same(), true).unwrap();
        let w = store.param(conv.w);
        assert_eq!(w.name, "fe1/proj/weight");
        let bound = 1.0 / 48f64.sqrt();
        assert!(w.value.data().iter().all(|v| v.abs() < bound));
        assert_eq!(store.get("fe1/proj/bias").unwrap().sum(), 0.0);
    }

    #[test]
    fn single_linear_count() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Linear::new(&mut Builder::new(&mut store, &mut rng), "embed", 3072, 256).unwrap();
        assert_eq!(store.num_scalars(), 786_688);
        assert_eq!(count_by_module(&store), vec![("embed".to_owned(), 786_688)]);
        assert!(count_by_module(&ParamStore::new()).is_empty());
    }

    #[test]
    fn batch_norm_queues_running_stats() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bn = BatchNorm::new(&mut Builder::new(&mut store, &mut rng), "bn", 1).unwrap();
        let s = Session::new(&store, Mode::Train);
        let x = s.tape.constant(Tensor::new([2, 1], vec![-1.0, 1.0]).unwrap());
        let y = bn.forward(&s, x).unwrap();
        let e = 1.0 / (1.0 + 1e-5f64).sqrt();
        assert!(s.tape.value(y).max_abs_diff(&Tensor::new([2, 1], vec![-e, e]).unwrap()) < 1e-15);
        assert_eq!(s.take_updates().len(), 2);
    }
}
