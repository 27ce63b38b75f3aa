//! Nodal analysis of small memristor/resistor/source networks and the
//! explicit transient loop that couples it to the device integrator.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::device::{self, DeviceParams, DeviceState, IntegratorConfig, Polarity};
use crate::error::{Error, Result};
use crate::stimulus::Waveform;

/// Value driven by a voltage source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceValue {
    Constant(f64),
    Waveform(Waveform),
}

impl SourceValue {
    /// Length of a waveform source; `None` for constants.
    pub fn duration(&self) -> Option<f64> {
        match self {
            SourceValue::Constant(_) => None,
            SourceValue::Waveform(w) => Some(w.total_duration()),
        }
    }

    fn at(&self, t: f64) -> Result<f64> {
        match self {
            SourceValue::Constant(v) => Ok(*v),
            SourceValue::Waveform(w) => w.voltage_at(t.min(w.total_duration())),
        }
    }

    /// Whether the source is 0 V throughout `[a, b]`.
    fn quiet_between(&self, a: f64, b: f64) -> bool {
        match self {
            SourceValue::Constant(v) => *v == 0.0,
            SourceValue::Waveform(w) => {
                let total = w.total_duration();
                if a >= total {
                    return w.segments().last().is_some_and(|s| s.is_quiet());
                }
                let mid = 0.5 * (a + b.min(total));
                match w.segment_index(mid) {
                    Ok(i) => w.segments()[i].is_quiet(),
                    Err(_) => false,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Element {
    Memristor {
        device: usize,
        pos: String,
        neg: String,
        #[serde(default)]
        polarity: Polarity,
    },
    Resistor {
        ohms: f64,
        pos: String,
        neg: String,
    },
    Vsource {
        value: SourceValue,
        pos: String,
        neg: String,
    },
}

impl Element {
    fn terminals(&self) -> (&str, &str) {
        match self {
            Element::Memristor { pos, neg, .. }
            | Element::Resistor { pos, neg, .. }
            | Element::Vsource { pos, neg, .. } => (pos, neg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetlist", into = "RawNetlist")]
pub struct Netlist {
    nodes: Vec<String>,
    ground: String,
    elements: Vec<Element>,
    compiled: Compiled,
}

#[derive(Serialize, Deserialize)]
struct RawNetlist {
    nodes: Vec<String>,
    ground: String,
    elements: Vec<Element>,
}

impl TryFrom<RawNetlist> for Netlist {
    type Error = Error;
    fn try_from(r: RawNetlist) -> Result<Self> {
        Netlist::new(r.nodes, &r.ground, r.elements)
    }
}

impl From<Netlist> for RawNetlist {
    fn from(n: Netlist) -> Self {
        RawNetlist { nodes: n.nodes, ground: n.ground, elements: n.elements }
    }
}

/// Index of a node in the unknown vector; `None` is ground.
type Slot = Option<usize>;

#[derive(Debug, Clone, PartialEq)]
struct Compiled {
    /// Unknown slot of every declared node.
    slots: Vec<Slot>,
    n_unknown_nodes: usize,
    /// (device id, pos, neg) as node indices.
    memristors: Vec<(usize, usize, usize)>,
    resistors: Vec<(f64, usize, usize)>,
    sources: Vec<(Slot, Slot)>,
    /// Nodes touched by at least one voltage source.
    source_nodes: Vec<bool>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }
    /// Returns false if already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

impl Netlist {
    pub fn new(nodes: Vec<String>, ground: &str, elements: Vec<Element>) -> Result<Self> {
        let topo = |m: String| Err(Error::Topology(m));
        let mut index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.as_str(), i).is_some() {
                return topo(format!("node '{n}' declared twice"));
            }
        }
        let Some(&g) = index.get(ground) else {
            return topo(format!("ground '{ground}' is not a declared node"));
        };
        if elements.is_empty() {
            return Err(Error::EmptyInput("netlist elements"));
        }

        let mut slots = vec![None; nodes.len()];
        let mut next = 0;
        for (i, s) in slots.iter_mut().enumerate() {
            if i != g {
                *s = Some(next);
                next += 1;
            }
        }

        let mut all = UnionFind::new(nodes.len());
        let mut src_only = UnionFind::new(nodes.len());
        let mut memristors = Vec::new();
        let mut resistors = Vec::new();
        let mut sources = Vec::new();
        let mut source_nodes = vec![false; nodes.len()];
        for (k, e) in elements.iter().enumerate() {
            let (p, n) = e.terminals();
            let (Some(&pi), Some(&ni)) = (index.get(p), index.get(n)) else {
                return topo(format!("element {k} references an undeclared node"));
            };
            if pi == ni {
                return topo(format!("element {k} has both terminals on '{p}'"));
            }
            all.union(pi, ni);
            match e {
                Element::Memristor { device, .. } => memristors.push((*device, pi, ni)),
                Element::Resistor { ohms, .. } => {
                    if !(*ohms > 0.0 && ohms.is_finite()) {
                        return Err(Error::Config(format!("element {k}: resistance must be positive")));
                    }
                    resistors.push((*ohms, pi, ni));
                }
                Element::Vsource { value, .. } => {
                    if !src_only.union(pi, ni) {
                        return topo(format!("voltage source {k} closes a source loop"));
                    }
                    if let SourceValue::Constant(v) = value {
                        crate::error::ensure_finite("source voltage", *v)?;
                    }
                    source_nodes[pi] = true;
                    source_nodes[ni] = true;
                    sources.push((slots[pi], slots[ni]));
                }
            }
        }
        let root = all.find(g);
        for (i, n) in nodes.iter().enumerate() {
            if all.find(i) != root {
                return topo(format!("node '{n}' is not connected to ground"));
            }
        }
        let mut ids: Vec<usize> = memristors.iter().map(|m| m.0).collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &d)| i != d) {
            return Err(Error::Config("memristor device ids must be 0..n without repeats".into()));
        }

        let compiled = Compiled { slots, n_unknown_nodes: next, memristors, resistors, sources, source_nodes };
        Ok(Self { nodes, ground: ground.to_owned(), elements, compiled })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn ground(&self) -> &str {
        &self.ground
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn device_count(&self) -> usize {
        self.compiled.memristors.len()
    }

    pub fn source_count(&self) -> usize {
        self.compiled.sources.len()
    }

    /// Polarity of every device, indexed by device id.
    pub fn polarities(&self) -> Vec<Polarity> {
        let mut out = vec![Polarity::Forward; self.device_count()];
        for e in &self.elements {
            if let Element::Memristor { device, polarity, .. } = e {
                out[*device] = *polarity;
            }
        }
        out
    }

    /// Source values, in element order.
    pub fn sources(&self) -> impl Iterator<Item = &SourceValue> {
        self.elements.iter().filter_map(|e| match e {
            Element::Vsource { value, .. } => Some(value),
            _ => None,
        })
    }

    /// Source voltages at `t`.
    pub fn source_values(&self, t: f64) -> Result<Vec<f64>> {
        self.sources().map(|s| s.at(t)).collect()
    }

    /// Sorted times in `(0, horizon)` where some waveform source changes segment.
    fn breakpoints(&self, horizon: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for s in self.sources() {
            if let SourceValue::Waveform(w) = s {
                out.extend(w.starts().iter().copied().filter(|&t| t > 0.0 && t < horizon));
                let end = w.total_duration();
                if end < horizon {
                    out.push(end);
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn shortest_pulse(&self) -> Option<f64> {
        self.sources()
            .filter_map(|s| match s {
                SourceValue::Waveform(w) => {
                    w.segments().iter().filter(|seg| !seg.is_quiet()).map(|seg| seg.duration).reduce(f64::min)
                }
                SourceValue::Constant(_) => None,
            })
            .reduce(f64::min)
    }
}

/// Node voltages (in declared order, ground included) and source currents
/// (flowing from `pos` through the external circuit back to `neg`).
#[derive(Debug, Clone, PartialEq)]
pub struct DcSolution {
    pub node_voltages: Vec<f64>,
    pub source_currents: Vec<f64>,
}

/// Reusable dense MNA workspace.
#[derive(Debug, Clone)]
pub struct Solver {
    n: usize,
    a: Vec<f64>,
    x: Vec<f64>,
    node_v: Vec<f64>,
}

impl Solver {
    pub fn new(net: &Netlist) -> Self {
        let n = net.compiled.n_unknown_nodes + net.compiled.sources.len();
        Self { n, a: vec![0.0; n * (n + 1)], x: vec![0.0; n], node_v: vec![0.0; net.nodes.len()] }
    }

    fn stamp_conductance(&mut self, g: f64, p: Slot, q: Slot) {
        let w = self.n + 1;
        if let Some(i) = p {
            self.a[i * w + i] += g;
        }
        if let Some(j) = q {
            self.a[j * w + j] += g;
        }
        if let (Some(i), Some(j)) = (p, q) {
            self.a[i * w + j] -= g;
            self.a[j * w + i] -= g;
        }
    }

    /// Solves in place; node voltages are then available from
    /// [`Solver::node_voltages`].
    pub fn solve_in_place(&mut self, net: &Netlist, resistances: &[f64], sources: &[f64]) -> Result<()> {
        let c = &net.compiled;
        if resistances.len() != c.memristors.len() || sources.len() != c.sources.len() {
            return Err(Error::Config(format!(
                "expected {} resistances and {} source values, got {} and {}",
                c.memristors.len(),
                c.sources.len(),
                resistances.len(),
                sources.len()
            )));
        }
        for &r in resistances {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("device resistance must be positive, got {r}")));
            }
        }
        self.a.iter_mut().for_each(|v| *v = 0.0);
        let w = self.n + 1;
        for &(id, p, q) in &c.memristors {
            self.stamp_conductance(1.0 / resistances[id], c.slots[p], c.slots[q]);
        }
        for &(r, p, q) in &c.resistors {
            self.stamp_conductance(1.0 / r, c.slots[p], c.slots[q]);
        }
        for (k, &(p, q)) in c.sources.iter().enumerate() {
            let row = c.n_unknown_nodes + k;
            if let Some(i) = p {
                self.a[i * w + row] += 1.0;
                self.a[row * w + i] += 1.0;
            }
            if let Some(j) = q {
                self.a[j * w + row] -= 1.0;
                self.a[row * w + j] -= 1.0;
            }
            self.a[row * w + self.n] = sources[k];
        }
        eliminate(self.n, &mut self.a, &mut self.x)?;
        for (v, s) in self.node_v.iter_mut().zip(&c.slots) {
            *v = s.map_or(0.0, |i| self.x[i]);
        }
        Ok(())
    }

    pub fn node_voltages(&self) -> &[f64] {
        &self.node_v
    }

    /// Solves the network for the given device resistances (by device id)
    /// and source voltages (in element order).
    pub fn solve(&mut self, net: &Netlist, resistances: &[f64], sources: &[f64]) -> Result<DcSolution> {
        self.solve_in_place(net, resistances, sources)?;
        // The MNA unknown is the current entering the source at `pos`.
        let k = net.compiled.n_unknown_nodes;
        Ok(DcSolution { node_voltages: self.node_v.clone(), source_currents: self.x[k..].iter().map(|i| -i).collect() })
    }
}

/// In-place Gaussian elimination with partial pivoting on an `n × (n+1)`
/// augmented row-major matrix.
fn eliminate(n: usize, a: &mut [f64], x: &mut [f64]) -> Result<()> {
    let w = n + 1;
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = scale * 1e-14;
    for col in 0..n {
        let (piv, mag) =
            (col..n)
                .map(|r| (r, a[r * w + col].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(mag > tiny) {
            return Err(Error::Topology("singular nodal system (floating subnetwork)".into()));
        }
        if piv != col {
            for k in 0..w {
                a.swap(piv * w + k, col * w + k);
            }
        }
        let d = a[col * w + col];
        for r in col + 1..n {
            let f = a[r * w + col] / d;
            if f != 0.0 {
                for k in col..w {
                    a[r * w + k] -= f * a[col * w + k];
                }
            }
        }
    }
    for r in (0..n).rev() {
        let mut s = a[r * w + n];
        for k in r + 1..n {
            s -= a[r * w + k] * x[k];
        }
        x[r] = s / a[r * w + r];
    }
    Ok(())
}

/// One-shot DC solve.
pub fn solve_dc(net: &Netlist, resistances: &[f64], sources: &[f64]) -> Result<DcSolution> {
    Solver::new(net).solve(net, resistances, sources)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceSample {
    pub v: f64,
    pub i: f64,
    pub w: f64,
    pub theta: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub node_voltages: Vec<f64>,
    pub devices: Vec<DeviceSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientTrace {
    pub node_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl TransientTrace {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Copy with every device current limited to `|i| <= limit`, as an
    /// instrument compliance would report it.
    pub fn with_compliance(&self, limit: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            for d in &mut s.devices {
                d.i = d.i.clamp(-limit.abs(), limit.abs());
            }
        }
        out
    }

    /// Largest relative KCL residual over all samples, taken at nodes that
    /// touch no voltage source and normalized by the largest branch current
    /// of that sample.
    pub fn max_kcl_residual(&self, net: &Netlist) -> f64 {
        let c = &net.compiled;
        let mut worst = 0.0f64;
        let mut sums = vec![0.0; net.nodes.len()];
        for s in &self.samples {
            sums.iter_mut().for_each(|v| *v = 0.0);
            let mut largest = 0.0f64;
            let branches = c
                .memristors
                .iter()
                .map(|&(id, p, q)| (s.devices[id].i, p, q))
                .chain(c.resistors.iter().map(|&(r, p, q)| ((s.node_voltages[p] - s.node_voltages[q]) / r, p, q)));
            for (i, p, q) in branches {
                sums[p] -= i;
                sums[q] += i;
                largest = largest.max(i.abs());
            }
            if largest == 0.0 {
                continue;
            }
            for (k, r) in sums.iter().enumerate() {
                if c.slots[k].is_some() && !c.source_nodes[k] {
                    worst = worst.max(r.abs() / largest);
                }
            }
        }
        worst
    }

    /// Writes `t,node:<name>...,dev:<id>:v,i,w,theta,R...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n_dev = self.samples.first().map_or(0, |s| s.devices.len());
        let mut header = vec!["t".to_owned()];
        header.extend(self.node_names.iter().map(|n| format!("node:{n}")));
        for d in 0..n_dev {
            for f in ["v", "i", "w", "theta", "R"] {
                header.push(format!("dev:{d}:{f}"));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for s in &self.samples {
            write!(out, "{}", s.t)?;
            for v in &s.node_voltages {
                write!(out, ",{v}")?;
            }
            for d in &s.devices {
                write!(out, ",{},{},{},{},{}", d.v, d.i, d.w, d.theta, d.r)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransientOptions {
    /// Step while any source is active; `None` picks `min(100 ns, shortest pulse / 50)`.
    pub dt: Option<f64>,
    /// Largest step while every source is at 0 V; `None` uses 1/50 of the quiet interval.
    pub quiet_dt: Option<f64>,
    /// Recording period; `None` records every step. Every breakpoint is
    /// recorded as well. Ignored when `record` is false.
    pub sample_dt: Option<f64>,
    /// When false only the first and last samples are kept.
    pub record: bool,
    pub integrator: IntegratorConfig,
}

impl Default for TransientOptions {
    fn default() -> Self {
        Self { dt: None, quiet_dt: None, sample_dt: None, record: true, integrator: IntegratorConfig::default() }
    }
}

impl TransientOptions {
    pub fn with_dt(dt: f64) -> Self {
        Self { dt: Some(dt), ..Self::default() }
    }
}

pub const MAX_DEFAULT_DT: f64 = 100e-9;

/// `min(100 ns, shortest pulse / 50)`.
pub fn default_dt(net: &Netlist, duration: f64) -> f64 {
    let shortest = net.shortest_pulse().unwrap_or(duration);
    if shortest > 0.0 {
        MAX_DEFAULT_DT.min(shortest / 50.0)
    } else {
        MAX_DEFAULT_DT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientResult {
    pub trace: TransientTrace,
    pub final_states: Vec<DeviceState>,
}

fn snapshot(t: f64, node_v: &[f64], net: &Netlist, states: &[DeviceState], rs: &[f64]) -> Sample {
    let mut devices = vec![DeviceSample { v: 0.0, i: 0.0, w: 0.0, theta: 0.0, r: 0.0 }; states.len()];
    for &(id, p, q) in &net.compiled.memristors {
        let v = node_v[p] - node_v[q];
        devices[id] = DeviceSample { v, i: v / rs[id], w: states[id].w, theta: states[id].theta, r: rs[id] };
    }
    Sample { t, node_voltages: node_v.to_vec(), devices }
}

fn check_devices(net: &Netlist, states: &[DeviceState], params: &[DeviceParams]) -> Result<()> {
    if states.len() != net.device_count() || params.len() != net.device_count() {
        return Err(Error::Config(format!(
            "netlist has {} devices but {} states and {} parameter sets were given",
            net.device_count(),
            states.len(),
            params.len()
        )));
    }
    for p in params {
        p.validate()?;
    }
    Ok(())
}

/// Explicit transient: each step freezes device resistances, solves the
/// network once and advances every device with its own terminal voltage.
pub fn run_transient(
    net: &Netlist,
    states: &[DeviceState],
    params: &[DeviceParams],
    duration: f64,
    opts: &TransientOptions,
) -> Result<TransientResult> {
    check_devices(net, states, params)?;
    opts.integrator.validate()?;
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::Config(format!("duration must be non-negative, got {duration}")));
    }
    let mut states: Vec<DeviceState> = states.to_vec();
    for (s, p) in states.iter_mut().zip(params) {
        device::resistance(s.w, p)?;
    }
    let polarities = net.polarities();
    for (s, pol) in states.iter_mut().zip(&polarities) {
        s.polarity = *pol;
    }
    let mut trace = TransientTrace { node_names: net.nodes.clone(), samples: Vec::new() };
    if duration == 0.0 {
        return Ok(TransientResult { trace, final_states: states });
    }
    let dt = opts.dt.unwrap_or_else(|| default_dt(net, duration));
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidTimeStep(dt));
    }

    let mut solver = Solver::new(net);
    let mut rs: Vec<f64> = states.iter().zip(params).map(|(s, p)| device::resistance_unchecked(s.w, p)).collect();
    let constant = net.sources().all(|s| matches!(s, SourceValue::Constant(_)));
    let mut src = net.source_values(0.0)?;
    let mut next_sample = 0.0;

    let mut edges = vec![0.0];
    edges.extend(net.breakpoints(duration));
    edges.push(duration);

    for win in edges.windows(2) {
        let (a, b) = (win[0], win[1]);
        let len = b - a;
        let quiet = net.sources().all(|s| s.quiet_between(a, b));
        let h_max = if quiet { opts.quiet_dt.unwrap_or(len / 50.0).max(dt) } else { dt };
        let n = ((len / h_max) - 1e-9).ceil().max(1.0) as usize;
        let h = len / n as f64;
        for k in 0..n {
            let t = a + k as f64 * h;
            let mid = t + 0.5 * h;
            if !constant {
                for (v, s) in src.iter_mut().zip(net.sources()) {
                    *v = s.at(mid)?;
                }
            }
            solver.solve_in_place(net, &rs, &src)?;
            let node_v = solver.node_voltages();
            let first = trace.samples.is_empty();
            if first || (opts.record && (k == 0 || t >= next_sample - 1e-12 * h)) {
                trace.samples.push(snapshot(t, node_v, net, &states, &rs));
                next_sample = t + opts.sample_dt.unwrap_or(0.0);
            }
            for &(id, p, q) in &net.compiled.memristors {
                let v = node_v[p] - node_v[q];
                let (next, _) = device::step(&states[id], v, h, &params[id], &opts.integrator)?;
                states[id] = next;
                rs[id] = device::resistance_unchecked(next.w, &params[id]);
            }
        }
    }
    for (v, s) in src.iter_mut().zip(net.sources()) {
        *v = s.at(duration)?;
    }
    solver.solve_in_place(net, &rs, &src)?;
    trace.samples.push(snapshot(duration, solver.node_voltages(), net, &states, &rs));
    Ok(TransientResult { trace, final_states: states })
}
