//! Nonnegative-matrix machinery: stochastic matrices, spectral radii,
//! irreducible block decomposition, and small dense linear solves.
//!
//! Everything here is dense and deterministic; the state spaces this crate
//! works with have at most a few hundred states.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Dense square matrix with nonnegative finite entries, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct NonnegMatrix {
    n: usize,
    data: Vec<f64>,
}

impl NonnegMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        for &v in &data {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "matrix entries must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(NonnegMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::invalid("matrix rows must all have length n"));
            }
            data.extend_from_slice(row);
        }
        NonnegMatrix::new(n, data)
    }

    pub fn zeros(n: usize) -> Self {
        NonnegMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn diag(d: &[f64]) -> Result<Self> {
        let n = d.len();
        let mut m = NonnegMatrix::zeros(n);
        for (i, &v) in d.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "diagonal entries must be finite and nonnegative, got {v}"
                )));
            }
            m.data[i * n + i] = v;
        }
        Ok(m)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn scaled(&self, c: f64) -> Self {
        NonnegMatrix {
            n: self.n,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// Matrix-vector product `M x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let row = self.row(i);
            let mut acc = 0.0;
            for j in 0..self.n {
                acc += row[j] * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// Right-multiplication by a diagonal matrix: `M * diag(d)`.
    pub fn mul_diag(&self, d: &[f64]) -> Result<Self> {
        assert_eq!(d.len(), self.n);
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                out.data[i * self.n + j] *= d[j];
            }
        }
        // revalidate: d may contain junk
        NonnegMatrix::new(self.n, out.data)
    }

    /// Principal submatrix on the given (sorted or unsorted) index set.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        let mut data = Vec::with_capacity(k * k);
        for &i in idx {
            for &j in idx {
                data.push(self.get(i, j));
            }
        }
        NonnegMatrix { n: k, data }
    }

    fn square(&self) -> Vec<f64> {
        let n = self.n;
        let a = &self.data;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let aik = a[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                let row_k = &a[k * n..(k + 1) * n];
                let out_i = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    out_i[j] += aik * row_k[j];
                }
            }
        }
        out
    }

    fn inf_norm(data: &[f64], n: usize) -> f64 {
        let mut best = 0.0f64;
        for i in 0..n {
            let s: f64 = data[i * n..(i + 1) * n].iter().sum();
            if s > best {
                best = s;
            }
        }
        best
    }
}

/// Row-stochastic transition matrix: nonnegative entries, rows summing to 1
/// within 1e-12.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    inner: NonnegMatrix,
}

impl TransitionMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let inner = NonnegMatrix::from_rows(rows)?;
        for i in 0..inner.n() {
            let s: f64 = inner.row(i).iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "transition matrix row {i} sums to {s}, expected 1"
                )));
            }
        }
        Ok(TransitionMatrix { inner })
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.inner.n()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.inner.row(i)
    }

    pub fn as_matrix(&self) -> &NonnegMatrix {
        &self.inner
    }

    /// `P * diag(d)` as a nonnegative matrix.
    pub fn mul_diag(&self, d: &[f64]) -> Result<NonnegMatrix> {
        self.inner.mul_diag(d)
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        TransitionMatrix::from_rows(&rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(p: TransitionMatrix) -> Vec<Vec<f64>> {
        (0..p.n_states()).map(|i| p.row(i).to_vec()).collect()
    }
}

/// Spectral radius of a nonnegative matrix.
///
/// Computed as the Gelfand limit r(M) = lim ||M^(2^m)||^(1/2^m) by repeated
/// squaring with per-step renormalization (the log of the radius is
/// accumulated exactly, so no overflow or underflow occurs). The estimate
/// decreases monotonically to r(M) along doubled powers and the iteration
/// stops when successive estimates agree to 1e-13 relative, which covers
/// periodic and defective inputs that defeat plain power iteration.
pub fn spectral_radius(m: &NonnegMatrix) -> f64 {
    let n = m.n();
    if n == 0 {
        return 0.0;
    }
    let s0 = NonnegMatrix::inf_norm(&m.data, n);
    if s0 == 0.0 {
        return 0.0;
    }
    let mut b = NonnegMatrix {
        n,
        data: m.data.iter().map(|v| v / s0).collect(),
    };
    let mut log_r = s0.ln();
    let mut weight = 1.0f64;
    let mut est_prev = f64::INFINITY;
    for _ in 0..64 {
        let sq = b.square();
        let s = NonnegMatrix::inf_norm(&sq, n);
        if s == 0.0 {
            // an exact zero power: nilpotent positivity pattern
            return 0.0;
        }
        weight *= 0.5;
        log_r += weight * s.ln();
        b = NonnegMatrix {
            n,
            data: sq.iter().map(|v| v / s).collect(),
        };
        let est = log_r.exp();
        if (est_prev - est).abs() <= 1e-13 * est.max(f64::MIN_POSITIVE) {
            return est;
        }
        est_prev = est;
    }
    log_r.exp()
}

/// Strongly connected block structure of the positivity pattern of a
/// nonnegative matrix, relabeled to block upper triangular order.
#[derive(Debug, Clone)]
pub struct BlockDecomposition {
    /// Strongly connected classes in topological order: edges of the class
    /// DAG point from earlier classes to later ones.
    pub classes: Vec<Vec<usize>>,
    /// Spectral radius of the principal submatrix of each class.
    pub class_spectral_radii: Vec<f64>,
    /// `reach[z][j]`: some power `m >= 1` has `M^m(z, zhat) > 0` for a state
    /// `zhat` in class `j`.
    pub reach: Vec<Vec<bool>>,
    /// Class index of each state.
    pub class_of: Vec<usize>,
}

/// Decompose the directed graph `{(i,j): m(i,j) > 0}` into strongly
/// connected classes. Edges use exact positivity (no epsilon): the matrices
/// this runs on are built from probabilities and expectations with exact
/// zeros.
pub fn decompose_blocks(m: &NonnegMatrix) -> BlockDecomposition {
    let n = m.n();
    let mut classes = tarjan_scc(m);
    classes.reverse(); // Tarjan emits sinks first; we want sources first
    for class in &mut classes {
        class.sort_unstable();
    }

    let mut class_of = vec![0usize; n];
    for (j, class) in classes.iter().enumerate() {
        for &z in class {
            class_of[z] = j;
        }
    }

    let class_spectral_radii: Vec<f64> = classes
        .iter()
        .map(|class| spectral_radius(&m.submatrix(class)))
        .collect();

    // reach via BFS over successors, path length >= 1
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| m.get(i, j) > 0.0).collect())
        .collect();
    let mut reach = vec![vec![false; classes.len()]; n];
    for z in 0..n {
        let mut seen = vec![false; n];
        let mut stack: Vec<usize> = adj[z].clone();
        for &w in &adj[z] {
            seen[w] = true;
        }
        while let Some(w) = stack.pop() {
            reach[z][class_of[w]] = true;
            for &v in &adj[w] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }

    BlockDecomposition {
        classes,
        class_spectral_radii,
        reach,
        class_of,
    }
}

/// Iterative Tarjan strongly-connected-components. Components are emitted in
/// reverse topological order of the condensation DAG.
fn tarjan_scc(m: &NonnegMatrix) -> Vec<Vec<usize>> {
    let n = m.n();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| m.get(i, j) > 0.0).collect())
        .collect();

    const UNSET: usize = usize::MAX;
    let mut index = vec![UNSET; n];
    let mut lowlink = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0usize;
    let mut components: Vec<Vec<usize>> = Vec::new();

    // explicit DFS: (node, next child position)
    let mut call_stack: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != UNSET {
            continue;
        }
        call_stack.push((root, 0));
        index[root] = next_index;
        lowlink[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut child)) = call_stack.last_mut() {
            if *child < adj[v].len() {
                let w = adj[v][*child];
                *child += 1;
                if index[w] == UNSET {
                    index[w] = next_index;
                    lowlink[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call_stack.push((w, 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index[w]);
                }
            } else {
                call_stack.pop();
                if let Some(&(parent, _)) = call_stack.last() {
                    lowlink[parent] = lowlink[parent].min(lowlink[v]);
                }
                if lowlink[v] == index[v] {
                    let mut component = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        component.push(w);
                        if w == v {
                            break;
                        }
                    }
                    components.push(component);
                }
            }
        }
    }
    components
}

/// Solve `(I - m) x = b` for a nonnegative matrix with `r(m) < 1`, by
/// Gaussian elimination with partial pivoting plus iterative refinement.
///
/// Rejects inputs with `r(m) >= 1 - 1e-12`: the Neumann series
/// `sum_k m^k` does not converge there and `(I - m)` is not invertible in
/// the required cone.
pub fn solve_linear_neumann(m: &NonnegMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = m.n();
    if b.len() != n {
        return Err(Error::invalid(
            "right-hand side length must match matrix size",
        ));
    }
    let r = spectral_radius(m);
    if r >= 1.0 - 1e-12 {
        return Err(Error::precondition(format!(
            "solve_linear_neumann requires r(m) < 1, got r = {r}"
        )));
    }

    // A = I - m
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = if i == j {
                1.0 - m.get(i, j)
            } else {
                -m.get(i, j)
            };
        }
    }
    let lu = LuFactors::factorize(n, a)?;
    let mut x = lu.solve(b);

    // iterative refinement; residual of (I - m) x - b
    let residual = |x: &[f64]| -> Vec<f64> {
        let mx = m.mul_vec(x);
        (0..n).map(|i| b[i] - (x[i] - mx[i])).collect()
    };
    for _ in 0..2 {
        let res = residual(&x);
        let rn = res.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if rn <= 1e-12 {
            break;
        }
        let dx = lu.solve(&res);
        for i in 0..n {
            x[i] += dx[i];
        }
    }
    let res = residual(&x);
    let rn = res.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let bn = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if rn > 1e-10 * (1.0 + bn) {
        return Err(Error::numerical(format!(
            "linear solve residual {rn} exceeds tolerance"
        )));
    }
    Ok(x)
}

/// LU factorization with partial pivoting for small dense systems.
struct LuFactors {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl LuFactors {
    fn factorize(n: usize, mut a: Vec<f64>) -> Result<Self> {
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut pivot = k;
            let mut best = a[k * n + k].abs();
            for i in (k + 1)..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    pivot = i;
                }
            }
            if best == 0.0 {
                return Err(Error::numerical("singular matrix in LU factorization"));
            }
            if pivot != k {
                for j in 0..n {
                    a.swap(k * n + j, pivot * n + j);
                }
                perm.swap(k, pivot);
            }
            let pk = a[k * n + k];
            for i in (k + 1)..n {
                let factor = a[i * n + k] / pk;
                a[i * n + k] = factor;
                for j in (k + 1)..n {
                    a[i * n + j] -= factor * a[k * n + j];
                }
            }
        }
        Ok(LuFactors { n, lu: a, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = b[self.perm[i]];
            for j in 0..i {
                acc -= self.lu[i * n + j] * y[j];
            }
            y[i] = acc;
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in (i + 1)..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Quadratic-formula oracle for the spectral radius of a nonnegative
    /// 2x2 matrix: the characteristic roots are real because bc >= 0.
    fn radius_2x2_oracle(m: &NonnegMatrix) -> f64 {
        assert_eq!(m.n(), 2);
        let (a, b, c, d) = (m.get(0, 0), m.get(0, 1), m.get(1, 0), m.get(1, 1));
        let disc = ((a - d) * (a - d) + 4.0 * b * c).sqrt();
        let l1 = ((a + d) + disc) / 2.0;
        let l2 = ((a + d) - disc) / 2.0;
        l1.abs().max(l2.abs())
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0_f64).max(a.abs().max(b.abs()))
    }

    #[test]
    fn radius_identity_is_one() {
        let m = NonnegMatrix::diag(&[1.0, 1.0]).unwrap();
        assert!(close(spectral_radius(&m), 1.0, 1e-12));
    }

    #[test]
    fn radius_nilpotent_is_zero() {
        let m = NonnegMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(spectral_radius(&m), 0.0);
    }

    #[test]
    fn radius_matches_quadratic_oracle() {
        let p = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let pd = p.mul_diag(&[0.95, 1.05]).unwrap();
        let expected = radius_2x2_oracle(&pd);
        assert!(close(spectral_radius(&pd), expected, 1e-11));
    }

    #[test]
    fn radius_of_periodic_pattern() {
        // period-2 irreducible pattern, eigenvalues +-1
        let m = NonnegMatrix::from_rows(&[vec![0.0, 2.0], vec![0.5, 0.0]]).unwrap();
        assert!(close(spectral_radius(&m), 1.0, 1e-12));
    }

    #[test]
    fn radius_of_defective_dominant() {
        // two equal-radius singleton classes coupled by a nilpotent part
        let m = NonnegMatrix::from_rows(&[vec![0.5, 1.0], vec![0.0, 0.5]]).unwrap();
        assert!(close(spectral_radius(&m), 0.5, 1e-10));
    }

    #[test]
    fn radius_of_stochastic_matrix_is_one() {
        let p = TransitionMatrix::from_rows(&[
            vec![0.2, 0.5, 0.3],
            vec![0.4, 0.4, 0.2],
            vec![0.0, 0.7, 0.3],
        ])
        .unwrap();
        assert!(close(spectral_radius(p.as_matrix()), 1.0, 1e-10));
    }

    #[test]
    fn blocks_irreducible_positive() {
        let m = NonnegMatrix::from_rows(&[vec![0.5, 0.5], vec![0.3, 0.7]]).unwrap();
        let d = decompose_blocks(&m);
        assert_eq!(d.classes, vec![vec![0, 1]]);
    }

    #[test]
    fn blocks_triangular_with_reach() {
        let m = NonnegMatrix::from_rows(&[vec![0.5, 0.5], vec![0.0, 1.2]]).unwrap();
        let d = decompose_blocks(&m);
        assert_eq!(d.classes, vec![vec![0], vec![1]]);
        assert!(close(d.class_spectral_radii[0], 0.5, 1e-12));
        assert!(close(d.class_spectral_radii[1], 1.2, 1e-12));
        // state 0 reaches class of state 1 (and its own class via the self-loop)
        assert!(d.reach[0][1]);
        assert!(d.reach[0][0]);
        assert!(!d.reach[1][0]);
        assert!(d.reach[1][1]);
    }

    #[test]
    fn blocks_diagonal_no_cross_reach() {
        let m = NonnegMatrix::diag(&[0.3, 0.7]).unwrap();
        let d = decompose_blocks(&m);
        assert_eq!(d.classes.len(), 2);
        let j0 = d.class_of[0];
        let j1 = d.class_of[1];
        assert!(!d.reach[0][j1]);
        assert!(!d.reach[1][j0]);
        // self-loops: each state reaches its own class
        assert!(d.reach[0][j0]);
        assert!(d.reach[1][j1]);
    }

    #[test]
    fn blocks_max_class_radius_equals_whole_radius() {
        let m = NonnegMatrix::from_rows(&[
            vec![0.2, 0.3, 0.1],
            vec![0.0, 0.9, 0.4],
            vec![0.0, 0.2, 0.5],
        ])
        .unwrap();
        let d = decompose_blocks(&m);
        let max_class = d.class_spectral_radii.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(close(max_class, spectral_radius(&m), 1e-10));
    }

    #[test]
    fn neumann_scalar_geometric_series() {
        let m = NonnegMatrix::diag(&[0.95]).unwrap();
        let x = solve_linear_neumann(&m, &[1.0]).unwrap();
        assert!(close(x[0], 20.0, 1e-12));
    }

    #[test]
    fn neumann_zero_matrix_is_identity() {
        let m = NonnegMatrix::zeros(3);
        let x = solve_linear_neumann(&m, &[1.0, 1.0, 1.0]).unwrap();
        for v in x {
            assert!(close(v, 1.0, 1e-15));
        }
    }

    #[test]
    fn neumann_symmetric_two_state() {
        let m = NonnegMatrix::from_rows(&[vec![0.4, 0.4], vec![0.4, 0.4]]).unwrap();
        let x = solve_linear_neumann(&m, &[1.0, 1.0]).unwrap();
        assert!(close(x[0], 5.0, 1e-12));
        assert!(close(x[1], 5.0, 1e-12));
    }

    #[test]
    fn neumann_rejects_radius_at_least_one() {
        let m = NonnegMatrix::diag(&[1.0]).unwrap();
        assert!(solve_linear_neumann(&m, &[1.0]).is_err());
    }

    #[test]
    fn neumann_nonnegative_output_for_nonnegative_rhs() {
        let p = TransitionMatrix::from_rows(&[
            vec![0.6, 0.4, 0.0],
            vec![0.1, 0.8, 0.1],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let m = p.mul_diag(&[0.9, 0.7, 0.95]).unwrap();
        let x = solve_linear_neumann(&m, &[1.0, 0.5, 0.0]).unwrap();
        for v in x {
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn transition_matrix_rejects_bad_row_sum() {
        assert!(TransitionMatrix::from_rows(&[vec![0.5, 0.4], vec![0.5, 0.5]]).is_err());
    }

    proptest! {
        #[test]
        fn radius_scales_linearly(entries in proptest::collection::vec(0.0f64..2.0, 9)) {
            let m = NonnegMatrix::new(3, entries).unwrap();
            let r = spectral_radius(&m);
            for c in [0.0f64, 0.5, 2.0] {
                let rc = spectral_radius(&m.scaled(c));
                prop_assert!((rc - c * r).abs() <= 1e-10 * (1.0 + c * r));
            }
        }

        #[test]
        fn class_radii_bound_whole_radius(entries in proptest::collection::vec(0.0f64..1.5, 16)) {
            let m = NonnegMatrix::new(4, entries).unwrap();
            let d = decompose_blocks(&m);
            let max_class = d.class_spectral_radii.iter().fold(0.0f64, |a, &b| a.max(b));
            let whole = spectral_radius(&m);
            prop_assert!((max_class - whole).abs() <= 1e-10 * (1.0 + whole));
        }
    }
}
