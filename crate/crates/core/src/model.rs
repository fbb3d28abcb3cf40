//! Plant-network data model: subsystems, directed couplings, gain budgets,
//! link patterns, block assembly and structural checks.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{block_diag, rank, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("network has no subsystems")]
    Empty,
    #[error("subsystem {index}: {reason}")]
    Subsystem { index: usize, reason: String },
    #[error("coupling {to}<-{from}: {reason}")]
    Coupling { from: usize, to: usize, reason: String },
    #[error("stability margins: {0}")]
    Beta(String),
    #[error("gain bounds: {0}")]
    Bounds(String),
    #[error("subsystem {index} is {what}")]
    Structure { index: usize, what: &'static str },
}

/// One LTI plant `ẋ_i = A_i x_i + B_i u_i`, `y_i = C_i x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub name: String,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl Subsystem {
    pub fn new(name: impl Into<String>, a: Matrix, b: Matrix, c: Matrix) -> Self {
        Subsystem { name: name.into(), a, b, c }
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// Directed physical coupling: subsystem `to` is driven by the state of `from`
/// through `h` (`n_to × n_from`).
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub from: usize,
    pub to: usize,
    pub h: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantNetwork {
    pub subsystems: Vec<Subsystem>,
    pub couplings: Vec<Coupling>,
    /// Per-subsystem stability margin β_i ≥ 0 (1/s).
    pub beta: Vec<f64>,
}

impl PlantNetwork {
    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    pub fn beta_max(&self) -> f64 {
        self.beta.iter().copied().fold(0.0, f64::max)
    }

    pub fn beta_min(&self) -> f64 {
        self.beta.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Coupling matrix `H_ij` if one is stored.
    pub fn coupling(&self, to: usize, from: usize) -> Option<&Matrix> {
        self.couplings
            .iter()
            .find(|c| c.to == to && c.from == from)
            .map(|c| &c.h)
    }

    /// Same network with every coupling removed.
    pub fn decoupled(&self) -> PlantNetwork {
        PlantNetwork { couplings: Vec::new(), ..self.clone() }
    }
}

/// Control-network link `(i, j)`: subsystem `i` receives `x̂_j` and `y_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Link {
    pub i: usize,
    pub j: usize,
}

impl Link {
    pub fn new(i: usize, j: usize) -> Self {
        Link { i, j }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}{}", self.i + 1, self.j + 1)
    }
}

/// Which ordered pairs are candidate control links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateScope {
    /// Every ordered pair `i ≠ j`.
    #[default]
    All,
    /// Only pairs `(i, j)` with a stored coupling `H_ij`.
    PlantEdges,
}

/// Candidate links in canonical order: unordered pairs `{a < b}` in
/// lexicographic order, each contributing `(a, b)` then `(b, a)`.
///
/// For three subsystems this is `a12, a21, a13, a31, a23, a32`.
pub fn candidate_links(net: &PlantNetwork, scope: CandidateScope) -> Vec<Link> {
    let n = net.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            for link in [Link::new(a, b), Link::new(b, a)] {
                let keep = match scope {
                    CandidateScope::All => true,
                    CandidateScope::PlantEdges => net.coupling(link.i, link.j).is_some(),
                };
                if keep {
                    out.push(link);
                }
            }
        }
    }
    out
}

/// Norm budgets on the gains; `f64::INFINITY` means unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct GainBounds {
    pub kappa: Vec<f64>,
    pub mu: Vec<f64>,
    pub iota_default: f64,
    pub omega_default: f64,
    pub iota: Vec<(Link, f64)>,
    pub omega: Vec<(Link, f64)>,
}

impl GainBounds {
    pub fn unbounded(n: usize) -> Self {
        GainBounds {
            kappa: vec![f64::INFINITY; n],
            mu: vec![f64::INFINITY; n],
            iota_default: f64::INFINITY,
            omega_default: f64::INFINITY,
            iota: Vec::new(),
            omega: Vec::new(),
        }
    }

    pub fn uniform(kappa: Vec<f64>, mu: Vec<f64>, iota: f64, omega: f64) -> Self {
        GainBounds {
            kappa,
            mu,
            iota_default: iota,
            omega_default: omega,
            iota: Vec::new(),
            omega: Vec::new(),
        }
    }

    pub fn iota(&self, link: Link) -> f64 {
        lookup(&self.iota, link).unwrap_or(self.iota_default)
    }

    pub fn omega(&self, link: Link) -> f64 {
        lookup(&self.omega, link).unwrap_or(self.omega_default)
    }

    pub fn validate(&self, n: usize) -> Result<(), ModelError> {
        if self.kappa.len() != n || self.mu.len() != n {
            return Err(ModelError::Bounds(format!(
                "expected {n} entries in kappa and mu, got {} and {}",
                self.kappa.len(),
                self.mu.len()
            )));
        }
        let all = self
            .kappa
            .iter()
            .chain(&self.mu)
            .chain(self.iota.iter().map(|(_, v)| v))
            .chain(self.omega.iter().map(|(_, v)| v))
            .chain([&self.iota_default, &self.omega_default]);
        for &v in all {
            if v.is_nan() || v < 0.0 {
                return Err(ModelError::Bounds(format!("budget {v} must be non-negative or unbounded")));
            }
        }
        for (link, _) in self.iota.iter().chain(&self.omega) {
            if link.i >= n || link.j >= n || link.i == link.j {
                return Err(ModelError::Bounds(format!("invalid link {link}")));
            }
        }
        Ok(())
    }
}

fn lookup(table: &[(Link, f64)], link: Link) -> Option<f64> {
    table.iter().find(|(l, _)| *l == link).map(|(_, v)| *v)
}

/// Binary link selection `α_ij`; the diagonal is never active.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LinkPattern {
    n: usize,
    active: BTreeSet<Link>,
}

impl LinkPattern {
    pub fn empty(n: usize) -> Self {
        LinkPattern { n, active: BTreeSet::new() }
    }

    pub fn from_links(n: usize, links: impl IntoIterator<Item = Link>) -> Self {
        let active = links.into_iter().filter(|l| l.i != l.j && l.i < n && l.j < n).collect();
        LinkPattern { n, active }
    }

    pub fn subsystems(&self) -> usize {
        self.n
    }

    pub fn contains(&self, link: Link) -> bool {
        self.active.contains(&link)
    }

    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        if self.contains(Link::new(i, j)) {
            1.0
        } else {
            0.0
        }
    }

    pub fn insert(&mut self, link: Link) {
        if link.i != link.j && link.i < self.n && link.j < self.n {
            self.active.insert(link);
        }
    }

    pub fn remove(&mut self, link: Link) {
        self.active.remove(&link);
    }

    pub fn link_count(&self) -> usize {
        self.active.len()
    }

    pub fn links(&self) -> impl Iterator<Item = Link> + '_ {
        self.active.iter().copied()
    }

    /// 0/1 indicators in the order of `order`.
    pub fn indicators(&self, order: &[Link]) -> Vec<u8> {
        order.iter().map(|l| u8::from(self.contains(*l))).collect()
    }
}

impl fmt::Display for LinkPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.active.iter().map(|l| l.to_string()).collect();
        write!(f, "{{{}}}", names.join(", "))
    }
}

/// Per-subsystem structural verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemReport {
    pub controllability_rank: usize,
    pub observability_rank: usize,
    pub states: usize,
}

impl SubsystemReport {
    pub fn controllable(&self) -> bool {
        self.controllability_rank == self.states
    }

    pub fn observable(&self) -> bool {
        self.observability_rank == self.states
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub subsystems: Vec<SubsystemReport>,
    pub beta_nonnegative: bool,
}

impl ValidationReport {
    pub fn all_controllable_observable(&self) -> bool {
        self.subsystems.iter().all(|s| s.controllable() && s.observable())
    }

    /// First structural defect as an error, if any.
    pub fn require_structure(&self) -> Result<(), ModelError> {
        for (index, s) in self.subsystems.iter().enumerate() {
            if !s.controllable() {
                return Err(ModelError::Structure { index, what: "not controllable" });
            }
            if !s.observable() {
                return Err(ModelError::Structure { index, what: "not observable" });
            }
        }
        Ok(())
    }
}

/// Kalman controllability matrix `[B, AB, …, A^{n-1}B]`.
pub fn controllability_matrix(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = Matrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    out
}

pub fn is_controllable(a: &Matrix, b: &Matrix) -> bool {
    rank(&controllability_matrix(a, b)) == a.nrows()
}

pub fn is_observable(a: &Matrix, c: &Matrix) -> bool {
    rank(&controllability_matrix(&a.transpose(), &c.transpose())) == a.nrows()
}

fn check_dimensions(net: &PlantNetwork) -> Result<(), ModelError> {
    if net.subsystems.is_empty() {
        return Err(ModelError::Empty);
    }
    for (index, s) in net.subsystems.iter().enumerate() {
        let n = s.a.nrows();
        let bad = |reason: String| ModelError::Subsystem { index, reason };
        if n == 0 || s.a.ncols() != n {
            return Err(bad(format!("A must be square and non-empty, got {}x{}", n, s.a.ncols())));
        }
        if s.b.nrows() != n || s.b.ncols() == 0 {
            return Err(bad(format!("B must be {n}xm with m>0, got {}x{}", s.b.nrows(), s.b.ncols())));
        }
        if s.c.ncols() != n || s.c.nrows() == 0 {
            return Err(bad(format!("C must be rx{n} with r>0, got {}x{}", s.c.nrows(), s.c.ncols())));
        }
        if s.a.iter().chain(s.b.iter()).chain(s.c.iter()).any(|v| !v.is_finite()) {
            return Err(bad("matrices must be finite".into()));
        }
    }
    let n = net.len();
    let mut seen = BTreeSet::new();
    for c in &net.couplings {
        let bad = |reason: String| ModelError::Coupling { from: c.from, to: c.to, reason };
        if c.from >= n || c.to >= n {
            return Err(bad(format!("endpoint out of range for {n} subsystems")));
        }
        if c.from == c.to {
            return Err(bad("self-coupling is not allowed".into()));
        }
        if !seen.insert((c.to, c.from)) {
            return Err(bad("duplicate coupling".into()));
        }
        let (rows, cols) = (net.subsystems[c.to].states(), net.subsystems[c.from].states());
        if c.h.nrows() != rows || c.h.ncols() != cols {
            return Err(bad(format!("H must be {rows}x{cols}, got {}x{}", c.h.nrows(), c.h.ncols())));
        }
        if c.h.iter().any(|v| !v.is_finite()) {
            return Err(bad("H must be finite".into()));
        }
    }
    if net.beta.len() != n {
        return Err(ModelError::Beta(format!("expected {n} margins, got {}", net.beta.len())));
    }
    if net.beta.iter().any(|b| !b.is_finite()) {
        return Err(ModelError::Beta("margins must be finite".into()));
    }
    Ok(())
}

/// Dimension checks (hard errors) plus controllability/observability and
/// margin-sign verdicts.
pub fn validate_network(net: &PlantNetwork) -> Result<ValidationReport, ModelError> {
    check_dimensions(net)?;
    let subsystems = net
        .subsystems
        .iter()
        .map(|s| SubsystemReport {
            controllability_rank: rank(&controllability_matrix(&s.a, &s.b)),
            observability_rank: rank(&controllability_matrix(&s.a.transpose(), &s.c.transpose())),
            states: s.states(),
        })
        .collect();
    Ok(ValidationReport { subsystems, beta_nonnegative: net.beta.iter().all(|&b| b >= 0.0) })
}

/// Validation that fails on any structural defect or negative margin.
pub fn require_valid(net: &PlantNetwork) -> Result<ValidationReport, ModelError> {
    let report = validate_network(net)?;
    if !report.beta_nonnegative {
        return Err(ModelError::Beta("margins must be non-negative".into()));
    }
    report.require_structure()?;
    Ok(report)
}

/// Aggregated network matrices with block offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub h: Matrix,
    pub state_offsets: Vec<usize>,
    pub input_offsets: Vec<usize>,
    pub output_offsets: Vec<usize>,
    pub state_dims: Vec<usize>,
    pub input_dims: Vec<usize>,
    pub output_dims: Vec<usize>,
}

impl BlockSystem {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn r(&self) -> usize {
        self.c.nrows()
    }

    /// Block `(i, j)` of an `n × n` state-space matrix.
    pub fn state_block(&self, mat: &Matrix, i: usize, j: usize) -> Matrix {
        mat.view(
            (self.state_offsets[i], self.state_offsets[j]),
            (self.state_dims[i], self.state_dims[j]),
        )
        .into_owned()
    }
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect()
}

pub fn assemble_block_matrices(net: &PlantNetwork) -> BlockSystem {
    let state_dims: Vec<usize> = net.subsystems.iter().map(Subsystem::states).collect();
    let input_dims: Vec<usize> = net.subsystems.iter().map(Subsystem::inputs).collect();
    let output_dims: Vec<usize> = net.subsystems.iter().map(Subsystem::outputs).collect();
    let state_offsets = offsets(&state_dims);
    let a = block_diag(&net.subsystems.iter().map(|s| s.a.clone()).collect::<Vec<_>>());
    let b = block_diag(&net.subsystems.iter().map(|s| s.b.clone()).collect::<Vec<_>>());
    let c = block_diag(&net.subsystems.iter().map(|s| s.c.clone()).collect::<Vec<_>>());
    let n = a.nrows();
    let mut h = Matrix::zeros(n, n);
    for cp in &net.couplings {
        h.view_mut((state_offsets[cp.to], state_offsets[cp.from]), (cp.h.nrows(), cp.h.ncols()))
            .copy_from(&cp.h);
    }
    BlockSystem {
        a,
        b,
        c,
        h,
        input_offsets: offsets(&input_dims),
        output_offsets: offsets(&output_dims),
        state_offsets,
        state_dims,
        input_dims,
        output_dims,
    }
}

/// Ordering of subsystems under which every nonzero `H_ij` has `j` before
/// `i` (so `H` becomes block lower triangular), or `None` when the influence
/// graph has a directed cycle. Ties are broken by the smallest index.
pub fn detect_poset(net: &PlantNetwork) -> Option<Vec<usize>> {
    let n = net.len();
    let mut indegree = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for c in &net.couplings {
        if c.h.iter().any(|v| *v != 0.0) {
            succ[c.from].push(c.to);
            indegree[c.to] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&next) = ready.iter().next() {
        ready.remove(&next);
        order.push(next);
        for &t in &succ[next] {
            indegree[t] -= 1;
            if indegree[t] == 0 {
                ready.insert(t);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Physical parameters of carts with inverted pendulums joined by springs
/// and dampers.
#[derive(Debug, Clone, PartialEq)]
pub struct PendulumParams {
    /// Cart masses `M_i`.
    pub cart_mass: Vec<f64>,
    /// Pendulum bob mass `m`.
    pub bob_mass: f64,
    pub gravity: f64,
    pub length: f64,
    /// Cart friction `c_i`.
    pub friction: Vec<f64>,
    /// Symmetric spring constants `k_ij = k_ji`, listed once per pair.
    pub springs: Vec<(usize, usize, f64)>,
    /// Symmetric damper constants `b_ij = b_ji`, listed once per pair.
    pub dampers: Vec<(usize, usize, f64)>,
    pub beta: f64,
}

impl PendulumParams {
    /// Three carts in a chain (1–2, 2–3) with the benchmark values.
    pub fn three_cart_benchmark() -> Self {
        PendulumParams {
            cart_mass: vec![2.0, 1.0, 3.0],
            bob_mass: 0.5,
            gravity: 10.0,
            length: 0.5,
            friction: vec![4.0, 2.0, 1.0],
            springs: vec![(0, 1, 5.0), (1, 2, 15.0)],
            dampers: vec![(0, 1, 1.0), (1, 2, 5.0)],
            beta: 0.5,
        }
    }

    fn pair_value(table: &[(usize, usize, f64)], i: usize, j: usize) -> f64 {
        table
            .iter()
            .filter(|(a, b, _)| (*a == i && *b == j) || (*a == j && *b == i))
            .map(|(_, _, v)| *v)
            .sum()
    }
}

/// Linearized cart-pendulum network; state `(θ, θ̇, x, ẋ)`, output `(θ, x)`.
/// Budgets default to unbounded.
pub fn build_pendulum_network(p: &PendulumParams) -> (PlantNetwork, GainBounds) {
    let n = p.cart_mass.len();
    let (m, g, l) = (p.bob_mass, p.gravity, p.length);
    let mut subsystems = Vec::with_capacity(n);
    for i in 0..n {
        let mi = p.cart_mass[i];
        let ki: f64 = (0..n).filter(|&j| j != i).map(|j| PendulumParams::pair_value(&p.springs, i, j)).sum();
        let bi: f64 = (0..n).filter(|&j| j != i).map(|j| PendulumParams::pair_value(&p.dampers, i, j)).sum();
        let ci = p.friction[i];
        #[rustfmt::skip]
        let a = Matrix::from_row_slice(4, 4, &[
            0.0, 1.0, 0.0, 0.0,
            (mi + m) * g / (mi * l), 0.0, ki / (mi * l), (ci + bi) / (mi * l),
            0.0, 0.0, 0.0, 1.0,
            -m * g / mi, 0.0, -ki / mi, -(ci + bi) / mi,
        ]);
        let b = Matrix::from_column_slice(4, 1, &[0.0, -1.0 / (mi * l), 0.0, 1.0 / mi]);
        #[rustfmt::skip]
        let c = Matrix::from_row_slice(2, 4, &[
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
        ]);
        subsystems.push(Subsystem::new(format!("pendulum{}", i + 1), a, b, c));
    }
    let mut couplings = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let kij = PendulumParams::pair_value(&p.springs, i, j);
            let bij = PendulumParams::pair_value(&p.dampers, i, j);
            if kij == 0.0 && bij == 0.0 {
                continue;
            }
            let mi = p.cart_mass[i];
            let mut h = Matrix::zeros(4, 4);
            h[(1, 2)] = -kij / (mi * l);
            h[(1, 3)] = -bij / (mi * l);
            h[(3, 2)] = kij / mi;
            h[(3, 3)] = bij / mi;
            couplings.push(Coupling { from: j, to: i, h });
        }
    }
    let net = PlantNetwork { subsystems, couplings, beta: vec![p.beta; n] };
    (net, GainBounds::unbounded(n))
}
