use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::plan::{PlanBook, SplitMode};
use super::topology::{Detector, DetectorKind, Direction, Topology};
use crate::error::{read_to_string, write_string, Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphOptions {
    /// Entries strictly below this are zeroed.
    pub epsilon: f64,
    pub split_mode: SplitMode,
    /// Substitute 1 for a zero degree so the normalization is invertible.
    pub degree_guard: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            split_mode: SplitMode::GreenPlusClearance,
            degree_guard: true,
        }
    }
}

/// Detector graph with its phase-split transition matrix `W`.
#[derive(Clone, Debug)]
pub struct DetectorGraph {
    detectors: Vec<Detector>,
    weights: Tensor,
    plan_id: String,
    options: GraphOptions,
    source: Option<(Topology, PlanBook)>,
}

/// Sets every entry below `epsilon` to exactly zero.
pub fn threshold(w: &Tensor, epsilon: f64) -> Tensor {
    w.map(|v| if v < epsilon { 0.0 } else { v })
}

/// Builds `W` for one plan id applied at every intersection.
///
/// Same-intersection pairs (the diagonal included) get weight 1. A
/// cross-intersection pair `(i, j)` with `j` directly downstream of `i`
/// gets the summed split of the phases at `i`'s intersection whose inbound
/// direction is `i`'s and whose outbound set contains `j`'s, divided by
/// half the summed split over all phases of that intersection's plan.
pub fn build_transition_matrix(
    topology: &Topology,
    plans: &PlanBook,
    plan_id: &str,
    options: &GraphOptions,
) -> Result<DetectorGraph> {
    topology.validate()?;
    for d in &topology.detectors {
        if plans.intersection(&d.intersection).is_none()
            && !topology.terminals.contains(&d.intersection)
        {
            return Err(Error::UnknownIntersection {
                detector: d.id.clone(),
                intersection: d.intersection.clone(),
            });
        }
    }
    let n = topology.detectors.len();
    let mut w = Tensor::zeros(&[n, n]);
    for (i, di) in topology.detectors.iter().enumerate() {
        for (j, dj) in topology.detectors.iter().enumerate() {
            let value = if di.intersection == dj.intersection {
                1.0
            } else if topology.is_adjacent(&di.id, &dj.id) {
                cross_weight(
                    topology,
                    plans,
                    plan_id,
                    options.split_mode,
                    di,
                    dj.direction,
                )?
            } else {
                0.0
            };
            w.set(i, j, value);
        }
    }
    Ok(DetectorGraph {
        detectors: topology.detectors.clone(),
        weights: threshold(&w, options.epsilon),
        plan_id: plan_id.to_string(),
        options: options.clone(),
        source: Some((topology.clone(), plans.clone())),
    })
}

fn cross_weight(
    topology: &Topology,
    plans: &PlanBook,
    plan_id: &str,
    mode: SplitMode,
    from: &Detector,
    to_dir: Direction,
) -> Result<f64> {
    let plan = plans.plan(&from.intersection, plan_id)?;
    let mut numerator = 0.0;
    for m in topology
        .movements
        .iter()
        .filter(|m| m.intersection == from.intersection && m.inbound == from.direction)
    {
        if m.effective_outbound().any(|o| o == to_dir) {
            numerator += plan.phase_split(&m.phase, mode)?;
        }
    }
    let denominator = plan.half_total_split(mode);
    if denominator <= 0.0 {
        return Err(Error::InvalidPlan(format!(
            "plan {plan_id} at {} allocates no split",
            from.intersection
        )));
    }
    let w = numerator / denominator;
    if w > 1.0 + 1e-12 {
        return Err(Error::InvalidTopology(format!(
            "movements from {} ({}) allocate more than a full cycle",
            from.id, from.direction
        )));
    }
    Ok(w)
}

impl DetectorGraph {
    /// Graph from an explicit matrix, without source specs.
    pub fn from_weights(
        detectors: Vec<Detector>,
        weights: Tensor,
        plan_id: &str,
        options: GraphOptions,
    ) -> Result<Self> {
        let n = detectors.len();
        if weights.shape() != [n, n] {
            return Err(Error::shape("DetectorGraph", weights.shape(), &[n, n]));
        }
        if weights.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidTopology("weights must lie in [0, 1]".into()));
        }
        Ok(Self {
            detectors,
            weights,
            plan_id: plan_id.to_string(),
            options,
            source: None,
        })
    }

    /// Graph over bare detector ids; each detector is its own intersection.
    pub fn from_ids(ids: &[String], weights: Tensor) -> Result<Self> {
        let detectors = ids
            .iter()
            .map(|id| Detector {
                id: id.clone(),
                intersection: id.clone(),
                direction: Direction::EB,
                kind: DetectorKind::Advance,
            })
            .collect();
        Self::from_weights(detectors, weights, "", GraphOptions::default())
    }

    pub fn len(&self) -> usize {
        self.detectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detectors.is_empty()
    }

    pub fn detectors(&self) -> &[Detector] {
        &self.detectors
    }

    pub fn detector_ids(&self) -> Vec<String> {
        self.detectors.iter().map(|d| d.id.clone()).collect()
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn plan_id(&self) -> &str {
        &self.plan_id
    }

    pub fn options(&self) -> &GraphOptions {
        &self.options
    }

    pub fn source(&self) -> Option<&(Topology, PlanBook)> {
        self.source.as_ref()
    }

    /// Diagonal of `D_O = diag(W·1)`.
    pub fn out_degree(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| (0..n).map(|j| self.weights.get(i, j)).sum())
            .collect()
    }

    /// Diagonal of `D_I = diag(Wᵀ·1)`.
    pub fn in_degree(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|j| (0..n).map(|i| self.weights.get(i, j)).sum())
            .collect()
    }

    fn normalized(&self, degrees: &[f64], transpose: bool) -> Result<Tensor> {
        let n = self.len();
        let mut out = Tensor::zeros(&[n, n]);
        for i in 0..n {
            let d = match degrees[i] {
                x if x > 0.0 => x,
                _ if self.options.degree_guard => 1.0,
                _ => return Err(Error::ZeroDegree(self.detectors[i].id.clone())),
            };
            for j in 0..n {
                let w = if transpose {
                    self.weights.get(j, i)
                } else {
                    self.weights.get(i, j)
                };
                out.set(i, j, w / d);
            }
        }
        Ok(out)
    }

    /// Forward random-walk operator `D_O⁻¹W`.
    pub fn forward_operator(&self) -> Result<Tensor> {
        self.normalized(&self.out_degree(), false)
    }

    /// Reverse random-walk operator `D_I⁻¹Wᵀ`.
    pub fn reverse_operator(&self) -> Result<Tensor> {
        self.normalized(&self.in_degree(), true)
    }

    /// SHA-256 over detector ids and the bit patterns of `W`.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for d in &self.detectors {
            h.update(d.id.as_bytes());
            h.update([0u8]);
        }
        for v in self.weights.data() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// CSV with a header row and a leading column of detector ids.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("detector_id");
        for d in &self.detectors {
            s.push(',');
            s.push_str(&d.id);
        }
        s.push('\n');
        for (i, d) in self.detectors.iter().enumerate() {
            s.push_str(&d.id);
            for j in 0..self.len() {
                s.push(',');
                s.push_str(&format!("{:?}", self.weights.get(i, j)));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_csv())
    }

    /// Reads a matrix written by [`DetectorGraph::write_csv`]. Detector
    /// metadata is taken from `topology` when given, otherwise left generic.
    pub fn read_csv(path: &Path, topology: Option<&Topology>) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line + 1,
            msg,
        };
        let (hl, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty matrix file".into()))?;
        let ids: Vec<String> = header
            .split(',')
            .skip(1)
            .map(|s| s.trim().to_string())
            .collect();
        let n = ids.len();
        let mut data = Vec::with_capacity(n * n);
        let mut rows = 0;
        for (ln, line) in lines {
            let mut cells = line.split(',');
            let id = cells.next().unwrap_or("").trim();
            if rows >= n || id != ids[rows] {
                return Err(parse_err(ln, format!("unexpected row `{id}`")));
            }
            let vals: Vec<f64> = cells
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(ln, e.to_string()))?;
            if vals.len() != n {
                return Err(parse_err(
                    ln,
                    format!("expected {n} values, got {}", vals.len()),
                ));
            }
            data.extend(vals);
            rows += 1;
        }
        if rows != n {
            return Err(parse_err(hl, format!("expected {n} rows, got {rows}")));
        }
        let detectors = match topology {
            Some(t) => ids
                .iter()
                .map(|id| {
                    t.detectors
                        .iter()
                        .find(|d| &d.id == id)
                        .cloned()
                        .ok_or_else(|| Error::UnknownDetector(id.clone()))
                })
                .collect::<Result<Vec<_>>>()?,
            None => ids
                .iter()
                .map(|id| Detector {
                    id: id.clone(),
                    intersection: String::new(),
                    direction: Direction::EB,
                    kind: DetectorKind::Advance,
                })
                .collect(),
        };
        Self::from_weights(
            detectors,
            Tensor::matrix(n, n, data)?,
            "",
            GraphOptions::default(),
        )
    }
}

/// `[(D_O⁻¹W)^0, (D_I⁻¹Wᵀ)^0, (D_O⁻¹W)^1, (D_I⁻¹Wᵀ)^1, …]` up to power `k_steps − 1`.
pub fn diffusion_supports(graph: &DetectorGraph, k_steps: usize) -> Result<Vec<Arc<Tensor>>> {
    if k_steps == 0 {
        return Err(Error::Config("diffusion steps K must be at least 1".into()));
    }
    let fwd = graph.forward_operator()?;
    let rev = graph.reverse_operator()?;
    let n = graph.len();
    let mut out = Vec::with_capacity(2 * k_steps);
    let (mut pf, mut pr) = (Tensor::identity(n), Tensor::identity(n));
    for k in 0..k_steps {
        if k > 0 {
            pf = pf.matmul(&fwd)?;
            pr = pr.matmul(&rev)?;
        }
        out.push(Arc::new(pf.clone()));
        out.push(Arc::new(pr.clone()));
    }
    Ok(out)
}

/// Truncated restart-walk series `Σ_{k<n_terms} α(1−α)^k (D_O⁻¹W)^k`.
pub fn stationary_distribution(
    graph: &DetectorGraph,
    alpha: f64,
    n_terms: usize,
) -> Result<Tensor> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::RestartProbability(alpha));
    }
    let fwd = graph.forward_operator()?;
    let n = graph.len();
    let mut power = Tensor::identity(n);
    let mut acc = Tensor::zeros(&[n, n]);
    let mut coef = alpha;
    for k in 0..n_terms {
        if k > 0 {
            power = power.matmul(&fwd)?;
            coef *= 1.0 - alpha;
        }
        acc = acc.add(&power.scale(coef))?;
    }
    Ok(acc)
}

/// Rebuilds the graph on the induced detector subset from its source specs.
pub fn restrict_graph(graph: &DetectorGraph, keep: &[String]) -> Result<DetectorGraph> {
    if keep.is_empty() {
        return Err(Error::EmptySubset);
    }
    let (topology, plans) = graph.source.as_ref().ok_or_else(|| {
        Error::InvalidTopology("graph was loaded without source specs; cannot rebuild".into())
    })?;
    let sub = topology.restrict(keep)?;
    build_transition_matrix(&sub, plans, &graph.plan_id, &graph.options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PLANS: &str = include_str!("../../data/plans_5083.toml");

    /// Upstream through detector at 5083 feeding a departure detector.
    fn through_pair() -> (Topology, PlanBook) {
        let topo = r#"
terminals = ["dep"]
adjacency = [["508302", "D1"]]

[[detector]]
id = "508302"
intersection = "5083"
direction = "EB"
kind = "advance"

[[detector]]
id = "508306"
intersection = "5083"
direction = "EB"
kind = "stopbar"

[[detector]]
id = "D1"
intersection = "dep"
direction = "EB"
kind = "advance"

[[movement]]
intersection = "5083"
phase = "2"
inbound = "EB"
outbound = ["EB"]

[[movement]]
intersection = "5083"
phase = "5"
inbound = "EB"
outbound = ["NB"]
"#;
        (
            Topology::parse(topo, Path::new("t")).unwrap(),
            PlanBook::parse(PLANS, Path::new("p")).unwrap(),
        )
    }

    pub(crate) fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> DetectorGraph {
        let w = Tensor::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else if rng.gen_bool(0.5) {
                rng.gen_range(0.1..1.0)
            } else {
                0.0
            }
        });
        let dets = (0..n)
            .map(|i| Detector {
                id: format!("d{i}"),
                intersection: format!("i{i}"),
                direction: Direction::EB,
                kind: DetectorKind::Advance,
            })
            .collect();
        DetectorGraph::from_weights(dets, w, "X", GraphOptions::default()).unwrap()
    }

    #[test]
    fn through_weight_and_same_intersection() {
        let (t, p) = through_pair();
        let g = build_transition_matrix(&t, &p, "P2", &GraphOptions::default()).unwrap();
        let w = g.weights();
        assert!((w.get(0, 2) - 0.425).abs() < 1e-12);
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(1, 0), 1.0);
        assert_eq!(w.get(0, 0), 1.0);
        // not adjacent
        assert_eq!(w.get(1, 2), 0.0);
        assert_eq!(w.get(2, 0), 0.0);
    }

    #[test]
    fn sub_epsilon_entry_is_zero() {
        let (mut t, p) = through_pair();
        // EB left under P2: 14/120 ≈ 0.117 survives ε = 0.1 but not ε = 0.12.
        t.detectors[2].direction = Direction::NB;
        let g = build_transition_matrix(&t, &p, "P2", &GraphOptions::default()).unwrap();
        assert!((g.weights().get(0, 2) - 14.0 / 120.0).abs() < 1e-12);
        let opts = GraphOptions {
            epsilon: 0.12,
            ..Default::default()
        };
        let g = build_transition_matrix(&t, &p, "P2", &opts).unwrap();
        assert_eq!(g.weights().get(0, 2), 0.0);
    }

    #[test]
    fn epsilon_above_one_kills_cross_entries() {
        let (t, p) = through_pair();
        let opts = GraphOptions {
            epsilon: 1.1,
            ..Default::default()
        };
        let g = build_transition_matrix(&t, &p, "P2", &opts).unwrap();
        assert_eq!(g.weights().get(0, 2), 0.0);
    }

    #[test]
    fn u_turn_never_contributes() {
        let (mut t, p) = through_pair();
        t.movements[0].outbound = vec![Direction::WB];
        t.detectors[2].direction = Direction::WB;
        let g = build_transition_matrix(&t, &p, "P2", &GraphOptions::default()).unwrap();
        assert_eq!(g.weights().get(0, 2), 0.0);
    }

    #[test]
    fn unknown_intersection_and_plan() {
        let (mut t, p) = through_pair();
        t.terminals.clear();
        assert!(matches!(
            build_transition_matrix(&t, &p, "P2", &GraphOptions::default()),
            Err(Error::UnknownIntersection { .. })
        ));
        let (t, p) = through_pair();
        assert!(matches!(
            build_transition_matrix(&t, &p, "P9", &GraphOptions::default()),
            Err(Error::UnknownPlan { .. })
        ));
    }

    #[test]
    fn supports_k1_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_graph(&mut rng, 4);
        let s = diffusion_supports(&g, 1).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(*s[0], Tensor::identity(4));
        assert_eq!(*s[1], Tensor::identity(4));
    }

    #[test]
    fn supports_match_repeated_multiplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_graph(&mut rng, 4);
        let s = diffusion_supports(&g, 3).unwrap();
        let f = g.forward_operator().unwrap();
        let r = g.reverse_operator().unwrap();
        // explicit element loops, independent of the power recursion above
        let mul = |a: &Tensor, b: &Tensor| {
            Tensor::from_fn(4, 4, |i, j| (0..4).map(|k| a.get(i, k) * b.get(k, j)).sum())
        };
        let f2 = mul(&f, &f);
        let r2 = mul(&r, &r);
        assert!(s[2].max_abs_diff(&f) < 1e-12);
        assert!(s[3].max_abs_diff(&r) < 1e-12);
        assert!(s[4].max_abs_diff(&f2) < 1e-12);
        assert!(s[5].max_abs_diff(&r2) < 1e-12);
    }

    #[test]
    fn forward_operator_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_graph(&mut rng, 6);
        let f = g.forward_operator().unwrap();
        for i in 0..6 {
            let s: f64 = (0..6).map(|j| f.get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_row_without_guard_is_an_error() {
        let dets = (0..2)
            .map(|i| Detector {
                id: format!("d{i}"),
                intersection: format!("i{i}"),
                direction: Direction::EB,
                kind: DetectorKind::Advance,
            })
            .collect();
        let w = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.5, 1.0]]).unwrap();
        let opts = GraphOptions {
            degree_guard: false,
            ..Default::default()
        };
        let g = DetectorGraph::from_weights(dets, w.clone(), "X", opts).unwrap();
        assert!(matches!(
            diffusion_supports(&g, 2),
            Err(Error::ZeroDegree(_))
        ));
        let guarded =
            DetectorGraph::from_weights(g.detectors().to_vec(), w, "X", GraphOptions::default())
                .unwrap();
        let f = guarded.forward_operator().unwrap();
        assert_eq!(f.get(0, 0), 0.0);
        assert_eq!(f.get(0, 1), 0.0);
    }

    #[test]
    fn stationary_alpha_one_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_graph(&mut rng, 3);
        assert_eq!(
            stationary_distribution(&g, 1.0, 20).unwrap(),
            Tensor::identity(3)
        );
        assert!(matches!(
            stationary_distribution(&g, 0.0, 20),
            Err(Error::RestartProbability(_))
        ));
    }

    #[test]
    fn stationary_converges_and_row_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(&mut rng, 3);
        let p50 = stationary_distribution(&g, 0.5, 50).unwrap();
        let p100 = stationary_distribution(&g, 0.5, 100).unwrap();
        assert!(p50.max_abs_diff(&p100) < 1e-9);
        for n_terms in [3usize, 10, 50] {
            let p = stationary_distribution(&g, 0.5, n_terms).unwrap();
            let expect = 1.0 - 0.5f64.powi(n_terms as i32);
            for i in 0..3 {
                let s: f64 = (0..3).map(|j| p.get(i, j)).sum();
                assert!((s - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn restrict_to_all_and_one() {
        let (t, p) = through_pair();
        let g = build_transition_matrix(&t, &p, "P2", &GraphOptions::default()).unwrap();
        let all = restrict_graph(&g, &g.detector_ids()).unwrap();
        assert_eq!(all.weights(), g.weights());
        let one = restrict_graph(&g, &["D1".to_string()]).unwrap();
        assert_eq!(one.weights().data(), &[1.0]);
        assert!(matches!(restrict_graph(&g, &[]), Err(Error::EmptySubset)));
    }

    #[test]
    fn csv_round_trip_and_fingerprint() {
        let (t, p) = through_pair();
        let g = build_transition_matrix(&t, &p, "P2", &GraphOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        g.write_csv(&path).unwrap();
        let back = DetectorGraph::read_csv(&path, Some(&t)).unwrap();
        assert_eq!(back.weights(), g.weights());
        assert_eq!(back.fingerprint(), g.fingerprint());
    }

    proptest::proptest! {
        #[test]
        fn threshold_idempotent(vals in proptest::collection::vec(0.0f64..1.0, 1..30), eps in 0.0f64..1.0) {
            let t = Tensor::new(vec![vals.len()], vals).unwrap();
            let once = threshold(&t, eps);
            proptest::prop_assert_eq!(threshold(&once, eps), once);
        }

        #[test]
        fn power_consistency(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..6);
            let g = random_graph(&mut rng, n);
            let s = diffusion_supports(&g, 4).unwrap();
            let s2 = diffusion_supports(&g, 2).unwrap();
            for k in 0..3 {
                let lhs = s[2 * k].matmul(&s2[2]).unwrap();
                proptest::prop_assert!(lhs.max_abs_diff(&s[2 * k + 2]) < 1e-12);
            }
        }
    }
}
