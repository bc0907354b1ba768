//! Recurrent cells: plain RNN, ES-RNN, alpha-RNN, alpha_t-RNN, GRU, LSTM.
//!
//! Every recurrence is written once over [`Graph`], so the same code runs
//! eagerly for inference and on a [`Tape`] for training. Values are `H x B`
//! matrices: one column per sequence in a mini-batch. Columns never
//! interact, so a batched forward pass equals per-column passes bit for bit.

use std::fmt;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};
use crate::linalg::{sigmoid, Matrix, Vector};
use crate::rng::{glorot_uniform, orthogonal_init, Rng};
use crate::tape::{Eval, Graph, Tape};

/// Initial unconstrained smoothing parameter; `sigmoid(ln 19) = 0.95`.
pub const ALPHA_RAW_INIT: f64 = 2.944_438_979_166_440_5;

/// Bias magnitude that saturates a logistic gate to exactly 0 or 1 in f64.
pub const PIN: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Rnn,
    EsRnn,
    AlphaRnn,
    AlphaTRnn,
    Gru,
    Lstm,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::Rnn,
        Architecture::EsRnn,
        Architecture::AlphaRnn,
        Architecture::AlphaTRnn,
        Architecture::Gru,
        Architecture::Lstm,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Architecture::Rnn => "rnn",
            Architecture::EsRnn => "es-rnn",
            Architecture::AlphaRnn => "alpha-rnn",
            Architecture::AlphaTRnn => "alpha-t-rnn",
            Architecture::Gru => "gru",
            Architecture::Lstm => "lstm",
        }
    }

    /// Cells that carry a smoothed state `h~`.
    pub fn is_smoothed(self) -> bool {
        !matches!(self, Architecture::Rnn | Architecture::Lstm)
    }

    /// Cells with a single trainable scalar smoothing parameter.
    pub fn has_scalar_alpha(self) -> bool {
        matches!(self, Architecture::EsRnn | Architecture::AlphaRnn)
    }

    fn gates(self) -> &'static [GateKind] {
        use GateKind::*;
        match self {
            Architecture::Rnn | Architecture::EsRnn | Architecture::AlphaRnn => &[Hidden],
            Architecture::AlphaTRnn => &[Hidden, Alpha],
            Architecture::Gru => &[Hidden, Alpha, Reset],
            Architecture::Lstm => &[Alpha, Reset, Input, Cell],
        }
    }

    /// Slots present for this architecture, in canonical order.
    pub fn slots(self) -> Vec<Slot> {
        Slot::ALL
            .iter()
            .copied()
            .filter(|s| match s.gate() {
                Some(g) => self.gates().contains(&g),
                None => match s {
                    Slot::AlphaRaw => self.has_scalar_alpha(),
                    _ => true,
                },
            })
            .collect()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .iter()
            .copied()
            .find(|a| a.tag() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown architecture '{s}' (expected one of rnn, es-rnn, alpha-rnn, alpha-t-rnn, gru, lstm)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::InvalidArgument(format!("unknown activation '{s}'"))),
        }
    }
}

/// Which state feeds the affine output layer of a smoothed cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Readout {
    #[default]
    Smoothed,
    Hidden,
}

impl Readout {
    pub fn tag(self) -> &'static str {
        match self {
            Readout::Smoothed => "smoothed",
            Readout::Hidden => "hidden",
        }
    }
}

impl FromStr for Readout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoothed" => Ok(Readout::Smoothed),
            "hidden" => Ok(Readout::Hidden),
            _ => Err(Error::InvalidArgument(format!("unknown readout '{s}'"))),
        }
    }
}

/// Input width `d`, hidden width `h`, output width `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d: usize,
    pub h: usize,
    pub n: usize,
}

impl Dims {
    pub fn new(d: usize, h: usize, n: usize) -> Self {
        Dims { d, h, n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    /// Candidate hidden state `h^`.
    Hidden,
    /// Smoothing gate `alpha^` (forget gate in the LSTM).
    Alpha,
    /// Reset gate `r^` (output gate in the LSTM).
    Reset,
    /// LSTM input gate `z^`.
    Input,
    /// LSTM cell candidate `c^`.
    Cell,
}

impl GateKind {
    fn slots(self) -> (Slot, Slot, Slot) {
        use Slot::*;
        match self {
            GateKind::Hidden => (Wh, Uh, Bh),
            GateKind::Alpha => (Walpha, Ualpha, Balpha),
            GateKind::Reset => (Wr, Ur, Br),
            GateKind::Input => (Wz, Uz, Bz),
            GateKind::Cell => (Wc, Uc, Bc),
        }
    }
}

/// A named parameter tensor position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Wh,
    Uh,
    Bh,
    Walpha,
    Ualpha,
    Balpha,
    Wr,
    Ur,
    Br,
    Wz,
    Uz,
    Bz,
    Wc,
    Uc,
    Bc,
    AlphaRaw,
    Wy,
    By,
}

impl Slot {
    pub const ALL: [Slot; 18] = [
        Slot::Wh,
        Slot::Uh,
        Slot::Bh,
        Slot::Walpha,
        Slot::Ualpha,
        Slot::Balpha,
        Slot::Wr,
        Slot::Ur,
        Slot::Br,
        Slot::Wz,
        Slot::Uz,
        Slot::Bz,
        Slot::Wc,
        Slot::Uc,
        Slot::Bc,
        Slot::AlphaRaw,
        Slot::Wy,
        Slot::By,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::Wh => "W_h",
            Slot::Uh => "U_h",
            Slot::Bh => "b_h",
            Slot::Walpha => "W_alpha",
            Slot::Ualpha => "U_alpha",
            Slot::Balpha => "b_alpha",
            Slot::Wr => "W_r",
            Slot::Ur => "U_r",
            Slot::Br => "b_r",
            Slot::Wz => "W_z",
            Slot::Uz => "U_z",
            Slot::Bz => "b_z",
            Slot::Wc => "W_c",
            Slot::Uc => "U_c",
            Slot::Bc => "b_c",
            Slot::AlphaRaw => "alpha_raw",
            Slot::Wy => "W_y",
            Slot::By => "b_y",
        }
    }

    pub fn from_name(name: &str) -> Option<Slot> {
        Slot::ALL.iter().copied().find(|s| s.name() == name)
    }

    fn gate(self) -> Option<GateKind> {
        use Slot::*;
        match self {
            Wh | Uh | Bh => Some(GateKind::Hidden),
            Walpha | Ualpha | Balpha => Some(GateKind::Alpha),
            Wr | Ur | Br => Some(GateKind::Reset),
            Wz | Uz | Bz => Some(GateKind::Input),
            Wc | Uc | Bc => Some(GateKind::Cell),
            AlphaRaw | Wy | By => None,
        }
    }

    /// Weight matrices carry the L1 penalty; biases and `alpha_raw` do not.
    pub fn is_weight_matrix(self) -> bool {
        use Slot::*;
        matches!(
            self,
            Wh | Uh | Walpha | Ualpha | Wr | Ur | Wz | Uz | Wc | Uc | Wy
        )
    }

    fn is_recurrent(self) -> bool {
        use Slot::*;
        matches!(self, Uh | Ualpha | Ur | Uz | Uc)
    }

    fn is_input(self) -> bool {
        use Slot::*;
        matches!(self, Wh | Walpha | Wr | Wz | Wc)
    }

    pub fn shape(self, dims: Dims) -> (usize, usize) {
        if self.is_input() {
            (dims.h, dims.d)
        } else if self.is_recurrent() {
            (dims.h, dims.h)
        } else {
            match self {
                Slot::AlphaRaw => (1, 1),
                Slot::Wy => (dims.n, dims.h),
                Slot::By => (dims.n, 1),
                _ => (dims.h, 1),
            }
        }
    }
}

/// One value per present slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<V> {
    slots: [Option<V>; 18],
}

impl<V> Weights<V> {
    fn empty() -> Self {
        Weights {
            slots: std::array::from_fn(|_| None),
        }
    }

    pub fn get(&self, slot: Slot) -> Result<&V> {
        self.slots[slot.index()]
            .as_ref()
            .ok_or_else(|| Error::Mismatch(format!("missing tensor {}", slot.name())))
    }

    pub fn get_mut(&mut self, slot: Slot) -> Option<&mut V> {
        self.slots[slot.index()].as_mut()
    }

    pub fn set(&mut self, slot: Slot, value: V) {
        self.slots[slot.index()] = Some(value);
    }

    /// Present slots in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (Slot, &V)> {
        Slot::ALL
            .iter()
            .filter_map(move |s| self.slots[s.index()].as_ref().map(|v| (*s, v)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (Slot, &mut V)> {
        Slot::ALL
            .iter()
            .zip(self.slots.iter_mut())
            .filter_map(|(s, v)| v.as_mut().map(|v| (*s, v)))
    }

    pub fn map<U>(&self, mut f: impl FnMut(Slot, &V) -> U) -> Weights<U> {
        let mut out = Weights::empty();
        for (s, v) in self.iter() {
            out.set(s, f(s, v));
        }
        out
    }
}

/// Architecture configuration shared by every forward evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSpec {
    pub arch: Architecture,
    pub dims: Dims,
    pub activation: Activation,
    pub readout: Readout,
}

impl CellSpec {
    pub fn new(arch: Architecture, dims: Dims) -> Self {
        CellSpec {
            arch,
            dims,
            activation: Activation::Tanh,
            readout: Readout::Smoothed,
        }
    }
}

/// All trainable tensors of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub spec: CellSpec,
    pub weights: Weights<Matrix>,
}

/// Per-step state; every field is `H x B`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<V> {
    /// Unsmoothed state `h^` (LSTM: the output `h`).
    pub h_hat: V,
    /// Smoothed state `h~`; equals `h_hat` for unsmoothed cells.
    pub h_tilde: V,
    /// LSTM cell memory.
    pub cell: Option<V>,
    /// Last smoothing gate output for dynamic cells.
    pub alpha: Option<V>,
}

impl CellState<Matrix> {
    pub fn zeros(arch: Architecture, h: usize, batch: usize) -> Self {
        let z = Matrix::zeros(h, batch);
        CellState {
            h_hat: z.clone(),
            h_tilde: z.clone(),
            cell: (arch == Architecture::Lstm).then(|| z.clone()),
            alpha: None,
        }
    }

    fn lift<G: Graph>(&self, g: &mut G) -> CellState<G::Value> {
        CellState {
            h_hat: g.constant(self.h_hat.clone()),
            h_tilde: g.constant(self.h_tilde.clone()),
            cell: self.cell.as_ref().map(|c| g.constant(c.clone())),
            alpha: self.alpha.as_ref().map(|a| g.constant(a.clone())),
        }
    }
}

impl<V> CellState<V> {
    fn lower<G: Graph<Value = V>>(&self, g: &G) -> CellState<Matrix> {
        CellState {
            h_hat: g.value(&self.h_hat).clone(),
            h_tilde: g.value(&self.h_tilde).clone(),
            cell: self.cell.as_ref().map(|c| g.value(c).clone()),
            alpha: self.alpha.as_ref().map(|a| g.value(a).clone()),
        }
    }
}

/// States after every step of a window plus the readout of the last one.
#[derive(Debug, Clone)]
pub struct WindowOutput {
    pub states: Vec<CellState<Matrix>>,
    pub prediction: Matrix,
}

impl WindowOutput {
    pub fn last(&self) -> &CellState<Matrix> {
        self.states.last().expect("windows are non-empty")
    }
}

fn activate<G: Graph>(g: &mut G, act: Activation, v: G::Value) -> G::Value {
    match act {
        Activation::Tanh => g.tanh(&v),
        Activation::Identity => v,
    }
}

/// `W x + U rec + b`; the recurrent term is skipped when `rec` is `None`.
fn affine<G: Graph>(
    g: &mut G,
    w: &Weights<G::Value>,
    gate: GateKind,
    x: &G::Value,
    rec: Option<&G::Value>,
) -> Result<G::Value> {
    let (sw, su, sb) = gate.slots();
    let mut z = g.matmul(w.get(sw)?, x)?;
    if let Some(r) = rec {
        let ur = g.matmul(w.get(su)?, r)?;
        z = g.add(&z, &ur)?;
    }
    g.add(&z, w.get(sb)?)
}

fn gate<G: Graph>(
    g: &mut G,
    w: &Weights<G::Value>,
    kind: GateKind,
    x: &G::Value,
    rec: Option<&G::Value>,
) -> Result<G::Value> {
    let z = affine(g, w, kind, x, rec)?;
    Ok(g.sigmoid(&z))
}

/// One recurrence step.
///
/// With `fresh` set the recurrent input is zero (first step of a window);
/// a smoothed cell still blends with `prev.h_tilde`, so a nonzero
/// `prev.h_tilde` acts as memory carried in from before the window.
pub fn step_graph<G: Graph>(
    g: &mut G,
    spec: &CellSpec,
    w: &Weights<G::Value>,
    prev: &CellState<G::Value>,
    x: &G::Value,
    fresh: bool,
) -> Result<CellState<G::Value>> {
    let act = spec.activation;
    let rec_src = match spec.arch {
        Architecture::Rnn | Architecture::EsRnn | Architecture::Lstm => &prev.h_hat,
        _ => &prev.h_tilde,
    };
    let rec = (!fresh).then_some(rec_src);

    Ok(match spec.arch {
        Architecture::Rnn => {
            let z = affine(g, w, GateKind::Hidden, x, rec)?;
            let h = activate(g, act, z);
            CellState {
                h_hat: h.clone(),
                h_tilde: h,
                cell: None,
                alpha: None,
            }
        }
        Architecture::EsRnn | Architecture::AlphaRnn => {
            let z = affine(g, w, GateKind::Hidden, x, rec)?;
            let h = activate(g, act, z);
            let a = g.sigmoid(w.get(Slot::AlphaRaw)?);
            let s = g.convex(&a, &h, &prev.h_tilde)?;
            CellState {
                h_hat: h,
                h_tilde: s,
                cell: None,
                alpha: None,
            }
        }
        Architecture::AlphaTRnn => {
            let a = gate(g, w, GateKind::Alpha, x, rec)?;
            let z = affine(g, w, GateKind::Hidden, x, rec)?;
            let h = activate(g, act, z);
            let s = g.convex(&a, &h, &prev.h_tilde)?;
            CellState {
                h_hat: h,
                h_tilde: s,
                cell: None,
                alpha: Some(a),
            }
        }
        Architecture::Gru => {
            let r = gate(g, w, GateKind::Reset, x, rec)?;
            let a = gate(g, w, GateKind::Alpha, x, rec)?;
            let reset = match rec {
                Some(v) => Some(g.hadamard(&r, v)?),
                None => None,
            };
            let z = affine(g, w, GateKind::Hidden, x, reset.as_ref())?;
            let h = activate(g, act, z);
            let s = g.convex(&a, &h, &prev.h_tilde)?;
            CellState {
                h_hat: h,
                h_tilde: s,
                cell: None,
                alpha: Some(a),
            }
        }
        Architecture::Lstm => {
            let r = gate(g, w, GateKind::Reset, x, rec)?;
            let a = gate(g, w, GateKind::Alpha, x, rec)?;
            let zg = gate(g, w, GateKind::Input, x, rec)?;
            let cz = affine(g, w, GateKind::Cell, x, rec)?;
            let cand = activate(g, act, cz);
            let update = g.hadamard(&zg, &cand)?;
            let c = match &prev.cell {
                Some(c_prev) => {
                    let kept = g.hadamard(&a, c_prev)?;
                    g.add(&kept, &update)?
                }
                None => update,
            };
            let ac = activate(g, act, c.clone());
            let h = g.hadamard(&r, &ac)?;
            CellState {
                h_hat: h.clone(),
                h_tilde: h,
                cell: Some(c),
                alpha: Some(a),
            }
        }
    })
}

/// Affine output layer on the state selected by the architecture and readout.
pub fn readout_graph<G: Graph>(
    g: &mut G,
    spec: &CellSpec,
    w: &Weights<G::Value>,
    state: &CellState<G::Value>,
) -> Result<G::Value> {
    let src = if spec.arch.is_smoothed() && spec.readout == Readout::Smoothed {
        &state.h_tilde
    } else {
        &state.h_hat
    };
    let y = g.matmul(w.get(Slot::Wy)?, src)?;
    g.add(&y, w.get(Slot::By)?)
}

/// Runs a whole window from `init`; returns the state after every step.
pub fn window_graph<G: Graph>(
    g: &mut G,
    spec: &CellSpec,
    w: &Weights<G::Value>,
    xs: &[G::Value],
    init: CellState<G::Value>,
) -> Result<Vec<CellState<G::Value>>> {
    ensure!(!xs.is_empty(), InvalidArgument, "empty input window");
    let mut states = Vec::with_capacity(xs.len());
    let mut prev = init;
    for (i, x) in xs.iter().enumerate() {
        let next = step_graph(g, spec, w, &prev, x, i == 0)?;
        states.push(next.clone());
        prev = next;
    }
    Ok(states)
}

impl CellParams {
    /// All tensors zero (and `alpha_raw = 0`, i.e. alpha = 0.5).
    pub fn zeros(spec: CellSpec) -> Self {
        let mut weights = Weights::empty();
        for s in spec.arch.slots() {
            let (r, c) = s.shape(spec.dims);
            weights.set(s, Matrix::zeros(r, c));
        }
        CellParams { spec, weights }
    }

    /// Glorot input and output weights, orthogonal recurrent weights, zero
    /// biases, alpha near one.
    pub fn init(spec: CellSpec, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(spec);
        for s in spec.arch.slots() {
            let (r, c) = s.shape(spec.dims);
            let m = if s.is_recurrent() {
                orthogonal_init(rng, r)
            } else if s.is_input() || s == Slot::Wy {
                glorot_uniform(rng, r, c)
            } else if s == Slot::AlphaRaw {
                Matrix::scalar(ALPHA_RAW_INIT)
            } else {
                continue;
            };
            p.weights.set(s, m);
        }
        p
    }

    pub fn arch(&self) -> Architecture {
        self.spec.arch
    }

    pub fn dims(&self) -> Dims {
        self.spec.dims
    }

    pub fn get(&self, slot: Slot) -> Result<&Matrix> {
        self.weights.get(slot)
    }

    /// Replaces one tensor, checking its shape.
    pub fn set(&mut self, slot: Slot, m: Matrix) -> Result<()> {
        let expect = slot.shape(self.spec.dims);
        ensure!(
            self.weights.get(slot).is_ok(),
            Mismatch,
            "{} is not a parameter of {}",
            slot.name(),
            self.spec.arch
        );
        ensure!(
            m.shape() == expect,
            Dimension,
            "{} must be {}x{}, got {}x{}",
            slot.name(),
            expect.0,
            expect.1,
            m.rows(),
            m.cols()
        );
        self.weights.set(slot, m);
        Ok(())
    }

    /// Mutable access for in-place updates (shape must be preserved).
    pub fn get_mut(&mut self, slot: Slot) -> Option<&mut Matrix> {
        self.weights.get_mut(slot)
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(|(_, m)| m.len()).sum()
    }

    /// Fixed smoothing parameter, for cells that have one.
    pub fn alpha(&self) -> Option<f64> {
        self.weights
            .get(Slot::AlphaRaw)
            .ok()
            .map(|m| sigmoid(m.data()[0]))
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        ensure!(
            alpha > 0.0 && alpha < 1.0,
            InvalidArgument,
            "alpha must lie in (0, 1), got {alpha}"
        );
        self.set(Slot::AlphaRaw, Matrix::scalar((alpha / (1.0 - alpha)).ln()))
    }

    /// Every parameter in canonical slot order, row-major within a slot.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .flat_map(|(_, m)| m.data().iter().copied())
            .collect()
    }

    /// Inverse of [`CellParams::flatten`].
    pub fn with_flat(&self, flat: &[f64]) -> Result<CellParams> {
        ensure!(
            flat.len() == self.num_parameters(),
            Dimension,
            "expected {} parameters, got {}",
            self.num_parameters(),
            flat.len()
        );
        let mut out = self.clone();
        let mut offset = 0;
        for s in self.spec.arch.slots() {
            let m = out.weights.get_mut(s).expect("slot present");
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|(_, m)| m.is_finite())
    }

    /// Binds every tensor as a tracked tape leaf.
    pub fn track(&self, tape: &mut Tape) -> Weights<crate::tape::NodeId> {
        self.weights.map(|_, m| tape.param(m.clone()))
    }

    fn check_inputs(&self, inputs: &[Matrix], carry: Option<&Matrix>) -> Result<usize> {
        ensure!(!inputs.is_empty(), InvalidArgument, "empty input window");
        let batch = inputs[0].cols();
        for x in inputs {
            ensure!(
                x.rows() == self.spec.dims.d && x.cols() == batch,
                Dimension,
                "window step is {}x{}, expected {}x{}",
                x.rows(),
                x.cols(),
                self.spec.dims.d,
                batch
            );
        }
        if let Some(c) = carry {
            ensure!(
                c.shape() == (self.spec.dims.h, batch),
                Dimension,
                "carried state is {}x{}, expected {}x{}",
                c.rows(),
                c.cols(),
                self.spec.dims.h,
                batch
            );
        }
        Ok(batch)
    }

    /// Initial state for a window: zero, except a carried smoothed state.
    fn initial_state(&self, batch: usize, carry: Option<&Matrix>) -> CellState<Matrix> {
        let mut s = CellState::zeros(self.spec.arch, self.spec.dims.h, batch);
        if let (Some(c), true) = (carry, self.spec.arch.is_smoothed()) {
            s.h_tilde = c.clone();
        }
        s
    }

    /// Evaluates a window of `p` inputs, each `d x B`.
    ///
    /// `carry` seeds the smoothed state of smoothed cells and is ignored by
    /// the plain RNN and the LSTM.
    pub fn run_window(&self, inputs: &[Matrix], carry: Option<&Matrix>) -> Result<WindowOutput> {
        let batch = self.check_inputs(inputs, carry)?;
        let mut g = Eval;
        let w = self.weights.map(|_, m| g.constant(m.clone()));
        let xs: Vec<_> = inputs.iter().map(|x| g.constant(x.clone())).collect();
        let init = self.initial_state(batch, carry).lift(&mut g);
        let states = window_graph(&mut g, &self.spec, &w, &xs, init)?;
        let last = states.last().expect("non-empty");
        let y = readout_graph(&mut g, &self.spec, &w, last)?;
        Ok(WindowOutput {
            states: states.iter().map(|s| s.lower(&g)).collect(),
            prediction: (*y).clone(),
        })
    }

    /// Batched predictions `n x B` from a zero initial state.
    pub fn predict_batch(&self, inputs: &[Matrix]) -> Result<Matrix> {
        Ok(self.run_window(inputs, None)?.prediction)
    }

    /// Single-sequence prediction from a zero initial state.
    pub fn forward_sequence(&self, window: &[Vector]) -> Result<Vector> {
        let inputs: Vec<Matrix> = window.iter().map(Vector::to_column).collect();
        let y = self.predict_batch(&inputs)?;
        Vector::try_from(&y)
    }

    /// One step with the recurrent term included.
    pub fn step(&self, prev: &CellState<Matrix>, x: &Matrix) -> Result<CellState<Matrix>> {
        self.check_inputs(std::slice::from_ref(x), Some(&prev.h_tilde))?;
        let mut g = Eval;
        let w = self.weights.map(|_, m| g.constant(m.clone()));
        let p = prev.lift(&mut g);
        let xv = g.constant(x.clone());
        Ok(step_graph(&mut g, &self.spec, &w, &p, &xv, false)?.lower(&g))
    }

    /// Readout of an arbitrary state.
    pub fn readout(&self, state: &CellState<Matrix>) -> Result<Matrix> {
        let mut g = Eval;
        let w = self.weights.map(|_, m| g.constant(m.clone()));
        let s = state.lift(&mut g);
        Ok((*readout_graph(&mut g, &self.spec, &w, &s)?).clone())
    }
}

/// Evaluates consecutive overlapping windows of one series, threading the
/// smoothed state: the window ending at `t` starts from the final smoothed
/// state of the window ending at `t - p`.
#[derive(Debug, Clone)]
pub struct Stream<'a> {
    params: &'a CellParams,
    p: usize,
    finals: Vec<Matrix>,
}

impl<'a> Stream<'a> {
    pub fn new(params: &'a CellParams, p: usize) -> Result<Self> {
        ensure!(
            p >= 1,
            InvalidArgument,
            "sequence length must be at least 1"
        );
        Ok(Stream {
            params,
            p,
            finals: Vec::new(),
        })
    }

    /// Evaluates the next window (`p` inputs, each `d x 1`).
    pub fn advance(&mut self, window: &[Matrix]) -> Result<WindowOutput> {
        ensure!(
            window.len() == self.p,
            InvalidArgument,
            "window length {} differs from sequence length {}",
            window.len(),
            self.p
        );
        let k = self.finals.len();
        let carry = (k >= self.p).then(|| &self.finals[k - self.p]);
        let out = self.params.run_window(window, carry)?;
        self.finals.push(out.last().h_tilde.clone());
        Ok(out)
    }
}

/// Lags until the smoothing weight `(1 - alpha)^s` halves: `-1 / log2(1 - alpha)`.
pub fn half_life(alpha: f64) -> Result<f64> {
    ensure!(
        alpha > 0.0 && alpha < 1.0,
        InvalidArgument,
        "alpha must lie in (0, 1), got {alpha}"
    );
    Ok(-1.0 / (1.0 - alpha).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn spec(arch: Architecture, d: usize, h: usize) -> CellSpec {
        CellSpec::new(arch, Dims::new(d, h, 1))
    }

    fn scalar_params(arch: Architecture, act: Activation) -> CellParams {
        let mut s = spec(arch, 1, 1);
        s.activation = act;
        let mut p = CellParams::zeros(s);
        for slot in arch.slots() {
            if slot.is_weight_matrix() {
                p.set(slot, Matrix::scalar(1.0)).unwrap();
            }
        }
        p
    }

    fn col(v: &[f64]) -> Vec<Matrix> {
        v.iter().map(|&x| Matrix::scalar(x)).collect()
    }

    fn random_inputs(rng: &mut Rng, d: usize, p: usize, b: usize) -> Vec<Matrix> {
        (0..p).map(|_| rng.normal_matrix(d, b)).collect()
    }

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn parameter_counts() {
        let count = |a, h| CellParams::zeros(spec(a, 1, h)).num_parameters();
        assert_eq!(count(Architecture::Rnn, 5), 41);
        assert_eq!(count(Architecture::AlphaRnn, 10), 132);
        assert_eq!(count(Architecture::Gru, 20), 1341);
        assert_eq!(count(Architecture::Lstm, 10), 491);
        assert_eq!(count(Architecture::EsRnn, 5), 42);
    }

    #[test]
    fn architecture_tags_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.tag().parse::<Architecture>().unwrap(), a);
        }
        assert!("transformer".parse::<Architecture>().is_err());
    }

    #[test]
    fn init_is_deterministic_and_alpha_near_one() {
        let s = spec(Architecture::AlphaRnn, 2, 4);
        let a = CellParams::init(s, &mut Rng::new(1));
        let b = CellParams::init(s, &mut Rng::new(1));
        assert_eq!(a, b);
        assert!((a.alpha().unwrap() - 0.95).abs() < 1e-12);
        assert_eq!(a.get(Slot::Bh).unwrap(), &Matrix::zeros(4, 1));
    }

    #[test]
    fn closed_form_two_lag_memory() {
        // y^ = phi y_t + alpha phi^2 y_{t-1} with phi = 1, alpha = 0.5.
        let mut p = scalar_params(Architecture::AlphaRnn, Activation::Identity);
        p.spec.readout = Readout::Hidden;
        p.set_alpha(0.5).unwrap();
        let y = p.forward_sequence(&[Vector::new(vec![1.0]), Vector::new(vec![1.0])]);
        assert!((y.unwrap().0[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn closed_form_memory_term_with_carry() {
        // Third term phi (1 - alpha) h~_{t-2} enters through the carried state.
        let mut p = scalar_params(Architecture::AlphaRnn, Activation::Identity);
        p.spec.readout = Readout::Hidden;
        p.set_alpha(0.3).unwrap();
        let phi = 1.0;
        let (y0, y1, carry) = (0.7, -1.2, 0.9);
        let out = p
            .run_window(&col(&[y0, y1]), Some(&Matrix::scalar(carry)))
            .unwrap();
        let expect = phi * y1 + 0.3 * phi * phi * y0 + phi * 0.7 * carry;
        assert!((out.prediction.data()[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn alpha_one_reduces_to_plain_rnn() {
        let mut rng = Rng::new(3);
        let s = spec(Architecture::AlphaRnn, 2, 4);
        let mut a = CellParams::init(s, &mut rng);
        a.set(Slot::AlphaRaw, Matrix::scalar(PIN)).unwrap();
        let mut r = CellParams::zeros(spec(Architecture::Rnn, 2, 4));
        for slot in r.spec.arch.slots() {
            r.set(slot, a.get(slot).unwrap().clone()).unwrap();
        }
        let xs = random_inputs(&mut rng, 2, 6, 3);
        let sa = a.run_window(&xs, None).unwrap();
        let sr = r.run_window(&xs, None).unwrap();
        for (x, y) in sa.states.iter().zip(&sr.states) {
            assert!(max_abs_diff(&x.h_tilde, &y.h_hat) < 1e-12);
        }
        assert!(max_abs_diff(&sa.prediction, &sr.prediction) < 1e-12);
    }

    #[test]
    fn alpha_zero_freezes_smoothed_state() {
        let mut rng = Rng::new(4);
        let mut a = CellParams::init(spec(Architecture::AlphaRnn, 1, 3), &mut rng);
        a.set(Slot::AlphaRaw, Matrix::scalar(-PIN)).unwrap();
        let prev = CellState {
            h_hat: rng.normal_matrix(3, 1),
            h_tilde: rng.normal_matrix(3, 1),
            cell: None,
            alpha: None,
        };
        let next = a.step(&prev, &Matrix::scalar(0.8)).unwrap();
        assert_eq!(next.h_tilde, prev.h_tilde);
    }

    #[test]
    fn dynamic_gate_pinned_open_and_shut() {
        let mut rng = Rng::new(5);
        let mut p = CellParams::init(spec(Architecture::AlphaTRnn, 2, 3), &mut rng);
        let prev = CellState {
            h_hat: rng.normal_matrix(3, 2),
            h_tilde: rng.normal_matrix(3, 2),
            cell: None,
            alpha: None,
        };
        let x = rng.normal_matrix(2, 2);
        p.set(Slot::Balpha, Matrix::filled(3, 1, PIN)).unwrap();
        let open = p.step(&prev, &x).unwrap();
        assert_eq!(open.h_tilde, open.h_hat);
        p.set(Slot::Balpha, Matrix::filled(3, 1, -PIN)).unwrap();
        let shut = p.step(&prev, &x).unwrap();
        assert_eq!(shut.h_tilde, prev.h_tilde);
    }

    #[test]
    fn constant_dynamic_gate_matches_fixed_alpha() {
        let mut rng = Rng::new(6);
        let base = CellParams::init(spec(Architecture::AlphaRnn, 2, 4), &mut rng);
        let mut fixed = base.clone();
        fixed.set_alpha(0.3).unwrap();
        let mut dynamic = CellParams::zeros(spec(Architecture::AlphaTRnn, 2, 4));
        for s in [Slot::Wh, Slot::Uh, Slot::Bh, Slot::Wy, Slot::By] {
            dynamic.set(s, base.get(s).unwrap().clone()).unwrap();
        }
        let logit = (0.3f64 / 0.7).ln();
        dynamic
            .set(Slot::Balpha, Matrix::filled(4, 1, logit))
            .unwrap();
        let xs = random_inputs(&mut rng, 2, 7, 2);
        let a = fixed.run_window(&xs, None).unwrap();
        let b = dynamic.run_window(&xs, None).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!(max_abs_diff(&x.h_tilde, &y.h_tilde) < 1e-12);
        }
    }

    #[test]
    fn gru_with_open_reset_matches_dynamic_cell() {
        let mut rng = Rng::new(7);
        let mut gru = CellParams::init(spec(Architecture::Gru, 2, 4), &mut rng);
        gru.set(Slot::Br, Matrix::filled(4, 1, PIN)).unwrap();
        let mut at = CellParams::zeros(spec(Architecture::AlphaTRnn, 2, 4));
        for s in at.spec.arch.slots() {
            at.set(s, gru.get(s).unwrap().clone()).unwrap();
        }
        let xs = random_inputs(&mut rng, 2, 8, 3);
        let a = gru.run_window(&xs, None).unwrap();
        let b = at.run_window(&xs, None).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!(max_abs_diff(&x.h_tilde, &y.h_tilde) < 1e-12);
        }
    }

    #[test]
    fn gru_with_closed_reset_and_open_gate_is_feed_forward() {
        let mut rng = Rng::new(8);
        let mut gru = CellParams::init(spec(Architecture::Gru, 2, 3), &mut rng);
        gru.set(Slot::Br, Matrix::filled(3, 1, -PIN)).unwrap();
        gru.set(Slot::Balpha, Matrix::filled(3, 1, PIN)).unwrap();
        gru.set(Slot::Bh, rng.normal_matrix(3, 1)).unwrap();
        let prev = CellState {
            h_hat: rng.normal_matrix(3, 1),
            h_tilde: rng.normal_matrix(3, 1),
            cell: None,
            alpha: None,
        };
        let x = rng.normal_matrix(2, 1);
        let next = gru.step(&prev, &x).unwrap();
        let ff = gru
            .get(Slot::Wh)
            .unwrap()
            .matmul(&x)
            .unwrap()
            .add_broadcast(gru.get(Slot::Bh).unwrap())
            .unwrap()
            .map(f64::tanh);
        assert!(max_abs_diff(&next.h_tilde, &ff) < 1e-15);
    }

    fn lstm_prev(rng: &mut Rng, h: usize) -> CellState<Matrix> {
        CellState {
            h_hat: rng.normal_matrix(h, 1),
            h_tilde: rng.normal_matrix(h, 1),
            cell: Some(rng.normal_matrix(h, 1)),
            alpha: None,
        }
    }

    #[test]
    fn lstm_forget_gate_shut_drops_memory() {
        let mut rng = Rng::new(9);
        let mut p = CellParams::init(spec(Architecture::Lstm, 2, 3), &mut rng);
        p.set(Slot::Balpha, Matrix::filled(3, 1, -PIN)).unwrap();
        let x = rng.normal_matrix(2, 1);
        let a = lstm_prev(&mut rng, 3);
        let mut b = a.clone();
        b.cell = Some(rng.normal_matrix(3, 1));
        assert_eq!(p.step(&a, &x).unwrap().cell, p.step(&b, &x).unwrap().cell);
    }

    #[test]
    fn lstm_output_gate_shut_severs_output() {
        let mut rng = Rng::new(10);
        let mut p = CellParams::init(spec(Architecture::Lstm, 2, 3), &mut rng);
        p.set(Slot::Br, Matrix::filled(3, 1, -PIN)).unwrap();
        let next = p
            .step(&lstm_prev(&mut rng, 3), &rng.normal_matrix(2, 1))
            .unwrap();
        assert!(next.h_hat.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lstm_coupled_gates_smooth_the_candidate() {
        let mut rng = Rng::new(11);
        let mut p = CellParams::init(spec(Architecture::Lstm, 2, 3), &mut rng);
        let beta = 0.4;
        for s in [Slot::Walpha, Slot::Ualpha, Slot::Wz, Slot::Uz] {
            let (r, c) = s.shape(p.dims());
            p.set(s, Matrix::zeros(r, c)).unwrap();
        }
        p.set(Slot::Balpha, Matrix::filled(3, 1, beta)).unwrap();
        p.set(Slot::Bz, Matrix::filled(3, 1, -beta)).unwrap();
        let prev = lstm_prev(&mut rng, 3);
        let x = rng.normal_matrix(2, 1);
        let next = p.step(&prev, &x).unwrap();
        let a = sigmoid(beta);
        let cand = p
            .get(Slot::Wc)
            .unwrap()
            .matmul(&x)
            .unwrap()
            .add_broadcast(&p.get(Slot::Uc).unwrap().matmul(&prev.h_hat).unwrap())
            .unwrap()
            .map(f64::tanh);
        let expect =
            Matrix::convex(&Matrix::scalar(a), prev.cell.as_ref().unwrap(), &cand).unwrap();
        assert!(max_abs_diff(next.cell.as_ref().unwrap(), &expect) < 1e-15);
    }

    #[test]
    fn plain_rnn_identity_is_geometric_ar() {
        let phi = 0.7;
        let mu = 0.25;
        let mut p = scalar_params(Architecture::Rnn, Activation::Identity);
        p.set(Slot::Wh, Matrix::scalar(phi)).unwrap();
        p.set(Slot::Uh, Matrix::scalar(phi)).unwrap();
        p.set(Slot::By, Matrix::scalar(mu)).unwrap();
        let ys = [0.3, -1.1, 2.0, 0.5];
        let y = p.predict_batch(&col(&ys)).unwrap().data()[0];
        let expect = mu
            + ys.iter()
                .rev()
                .enumerate()
                .map(|(i, v)| phi.powi(i as i32 + 1) * v)
                .sum::<f64>();
        assert!((y - expect).abs() < 1e-14);
    }

    #[test]
    fn es_rnn_alpha_one_matches_plain_output() {
        let mut rng = Rng::new(12);
        let mut es = CellParams::init(spec(Architecture::EsRnn, 2, 4), &mut rng);
        es.set(Slot::AlphaRaw, Matrix::scalar(PIN)).unwrap();
        let mut r = CellParams::zeros(spec(Architecture::Rnn, 2, 4));
        for s in r.spec.arch.slots() {
            r.set(s, es.get(s).unwrap().clone()).unwrap();
        }
        let xs = random_inputs(&mut rng, 2, 5, 4);
        assert!(
            max_abs_diff(
                &es.predict_batch(&xs).unwrap(),
                &r.predict_batch(&xs).unwrap()
            ) < 1e-12
        );
    }

    #[test]
    fn es_rnn_smoothing_is_not_fed_back() {
        let mut rng = Rng::new(13);
        let mut es = CellParams::init(spec(Architecture::EsRnn, 1, 3), &mut rng);
        es.set_alpha(0.2).unwrap();
        let xs = random_inputs(&mut rng, 1, 6, 1);
        let with_carry = es.run_window(&xs, Some(&rng.normal_matrix(3, 1))).unwrap();
        let without = es.run_window(&xs, None).unwrap();
        for (a, b) in with_carry.states.iter().zip(&without.states) {
            assert_eq!(a.h_hat, b.h_hat);
        }
        assert_ne!(with_carry.last().h_tilde, without.last().h_tilde);
    }

    #[test]
    fn zero_input_zero_state_gives_zero_output() {
        for arch in Architecture::ALL {
            let mut rng = Rng::new(14);
            let p = CellParams::init(spec(arch, 2, 3), &mut rng);
            let xs = vec![Matrix::zeros(2, 1); 4];
            assert!(
                p.predict_batch(&xs)
                    .unwrap()
                    .data()
                    .iter()
                    .all(|v| *v == 0.0),
                "{arch}"
            );
        }
    }

    #[test]
    fn single_step_plain_rnn_is_feed_forward() {
        let mut rng = Rng::new(15);
        let mut p = CellParams::init(spec(Architecture::Rnn, 3, 4), &mut rng);
        p.set(Slot::Bh, rng.normal_matrix(4, 1)).unwrap();
        p.set(Slot::By, rng.normal_matrix(1, 1)).unwrap();
        let x = rng.normal_matrix(3, 1);
        let h = p
            .get(Slot::Wh)
            .unwrap()
            .matmul(&x)
            .unwrap()
            .add_broadcast(p.get(Slot::Bh).unwrap())
            .unwrap()
            .map(f64::tanh);
        let y = p
            .get(Slot::Wy)
            .unwrap()
            .matmul(&h)
            .unwrap()
            .add_broadcast(p.get(Slot::By).unwrap())
            .unwrap();
        assert_eq!(p.predict_batch(&[x]).unwrap(), y);
    }

    #[test]
    fn empty_window_and_bad_shapes_are_rejected() {
        let p = CellParams::zeros(spec(Architecture::AlphaRnn, 2, 3));
        assert!(matches!(
            p.forward_sequence(&[]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            p.predict_batch(&[Matrix::zeros(3, 1)]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            p.run_window(&[Matrix::zeros(2, 1)], Some(&Matrix::zeros(2, 1))),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn batched_equals_per_column() {
        let mut rng = Rng::new(16);
        for arch in Architecture::ALL {
            let p = CellParams::init(spec(arch, 2, 5), &mut rng);
            let xs = random_inputs(&mut rng, 2, 4, 6);
            let batched = p.predict_batch(&xs).unwrap();
            for b in 0..6 {
                let single: Vec<Matrix> = xs
                    .iter()
                    .map(|x| Matrix::column(x.column_values(b)))
                    .collect();
                let y = p.predict_batch(&single).unwrap();
                assert_eq!(y.data()[0].to_bits(), batched.get(0, b).to_bits(), "{arch}");
            }
        }
    }

    #[test]
    fn unrolled_smoothing_identity() {
        let mut rng = Rng::new(17);
        let mut p = CellParams::init(spec(Architecture::AlphaRnn, 1, 2), &mut rng);
        p.set_alpha(0.37).unwrap();
        let start = rng.normal_matrix(2, 1);
        let xs = random_inputs(&mut rng, 1, 30, 1);
        let out = p.run_window(&xs, Some(&start)).unwrap();
        let a: f64 = 0.37;
        let t = xs.len();
        for j in 0..2 {
            let mut s = (1.0 - a).powi(t as i32) * start.data()[j];
            for (k, st) in out.states.iter().rev().enumerate() {
                s += a * (1.0 - a).powi(k as i32) * st.h_hat.data()[j];
            }
            assert!((s - out.last().h_tilde.data()[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn stream_carries_state_from_p_windows_back() {
        let mut rng = Rng::new(18);
        let mut p = CellParams::init(spec(Architecture::AlphaRnn, 1, 2), &mut rng);
        p.set_alpha(0.4).unwrap();
        let series: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let plen = 3;
        let mut stream = Stream::new(&p, plen).unwrap();
        let mut finals = Vec::new();
        for t in plen - 1..series.len() {
            let w = col(&series[t + 1 - plen..=t]);
            let out = stream.advance(&w).unwrap();
            let k = finals.len();
            let carry: Option<&Matrix> = if k >= plen {
                Some(&finals[k - plen])
            } else {
                None
            };
            let direct = p.run_window(&w, carry).unwrap();
            assert_eq!(out.prediction, direct.prediction);
            finals.push(out.last().h_tilde.clone());
        }
    }

    #[test]
    fn half_life_values() {
        assert!((half_life(0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(half_life(0.0).is_err());
        assert!(half_life(1.0).is_err());
        assert!(half_life(f64::NAN).is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let p = CellParams::init(spec(Architecture::Gru, 2, 3), &mut Rng::new(19));
        let flat = p.flatten();
        assert_eq!(flat.len(), p.num_parameters());
        assert_eq!(p.with_flat(&flat).unwrap(), p);
        assert!(p.with_flat(&flat[1..]).is_err());
    }

    /// Composite cell graph vs central differences on every tensor.
    #[test]
    fn window_gradients_match_finite_differences() {
        let mut rng = Rng::new(20);
        for arch in Architecture::ALL {
            let mut p = CellParams::init(spec(arch, 2, 3), &mut rng);
            for s in arch.slots() {
                let (r, c) = s.shape(p.dims());
                p.set(s, rng.normal_matrix(r, c).scale(0.5)).unwrap();
            }
            let xs = random_inputs(&mut rng, 2, 4, 2);
            let target = rng.normal_matrix(1, 2);
            let loss_of = |q: &CellParams| {
                let y = q.predict_batch(&xs).unwrap();
                y.zip_map(&target, |a, b| (a - b) * (a - b)).unwrap().sum() / 2.0
            };
            let mut tape = Tape::new();
            let w = p.track(&mut tape);
            let xv: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
            let init = CellState::zeros(arch, 3, 2).lift(&mut tape);
            let states = window_graph(&mut tape, &p.spec, &w, &xv, init).unwrap();
            let y = readout_graph(&mut tape, &p.spec, &w, states.last().unwrap()).unwrap();
            let l = tape.mse(y, &target).unwrap();
            let grads = tape.backward(l).unwrap();
            for (slot, id) in w.iter() {
                let g = grads.get(*id).unwrap();
                for i in 0..g.len() {
                    let h = 1e-5;
                    let mut up = p.clone();
                    up.get_mut(slot).unwrap().data_mut()[i] += h;
                    let mut dn = p.clone();
                    dn.get_mut(slot).unwrap().data_mut()[i] -= h;
                    let fd = (loss_of(&up) - loss_of(&dn)) / (2.0 * h);
                    let a = g.data()[i];
                    let rel = (a - fd).abs() / 1f64.max(a.abs()).max(fd.abs());
                    assert!(rel < 1e-6, "{arch} {} [{i}]: {a} vs {fd}", slot.name());
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn smoothed_state_lies_between_candidate_and_previous(
            seed in any::<u64>(),
            arch_ix in 0usize..3,
            alpha in 0.01f64..0.99,
        ) {
            let arch = [Architecture::AlphaRnn, Architecture::AlphaTRnn, Architecture::Gru][arch_ix];
            let mut rng = Rng::new(seed);
            let mut p = CellParams::init(spec(arch, 2, 3), &mut rng);
            if arch == Architecture::AlphaRnn {
                p.set_alpha(alpha).unwrap();
            }
            let xs = random_inputs(&mut rng, 2, 6, 1);
            let out = p.run_window(&xs, Some(&rng.normal_matrix(3, 1))).unwrap();
            let mut prev = out.states[0].h_tilde.clone();
            for st in &out.states[1..] {
                for j in 0..3 {
                    let (a, b) = (st.h_hat.data()[j], prev.data()[j]);
                    let v = st.h_tilde.data()[j];
                    prop_assert!(v >= a.min(b) - 1e-15 && v <= a.max(b) + 1e-15);
                }
                if let Some(g) = &st.alpha {
                    prop_assert!(g.data().iter().all(|v| *v > 0.0 && *v < 1.0));
                }
                prev = st.h_tilde.clone();
            }
        }

        #[test]
        fn tanh_cells_keep_hidden_state_bounded(seed in any::<u64>(), scale in 0.1f64..50.0) {
            let mut rng = Rng::new(seed);
            for arch in Architecture::ALL {
                let p = CellParams::init(spec(arch, 1, 2), &mut rng);
                let xs: Vec<Matrix> = (0..5).map(|_| rng.normal_matrix(1, 1).scale(scale)).collect();
                let out = p.run_window(&xs, None).unwrap();
                for st in &out.states {
                    prop_assert!(st.h_hat.data().iter().all(|v| v.abs() <= 1.0));
                }
            }
        }
    }
}
