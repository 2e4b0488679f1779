use std::collections::HashMap;

use super::{Node, NetworkError, Pipe};

/// Sparse signed pipe-by-node matrix. Each row holds at most two entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    rows: usize,
    cols: usize,
    /// Per row: (column, sign) pairs sorted by column.
    entries: Vec<Vec<(usize, i8)>>,
}

impl IncidenceMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[(usize, i8)] {
        &self.entries[r]
    }

    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.entries[r].iter().find(|(col, _)| *col == c).map_or(0, |&(_, s)| s)
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<i8>> {
        let mut out = vec![vec![0i8; self.cols]; self.rows];
        for (r, row) in self.entries.iter().enumerate() {
            for &(c, s) in row {
                out[r][c] = s;
            }
        }
        out
    }

    /// `self · x`
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.entries.iter().map(|row| row.iter().map(|&(c, s)| f64::from(s) * x[c]).sum()).collect()
    }

    /// `selfᵀ · y`
    pub fn transpose_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, row) in self.entries.iter().enumerate() {
            for &(c, s) in row {
                out[c] += f64::from(s) * y[r];
            }
        }
        out
    }
}

/// Builds `(A1, A2)`: pipe rows over junction columns and fixed-head
/// columns. A pipe gets `+1` at its `to` node and `-1` at its `from` node,
/// so positive flow runs from → to.
pub fn build_incidence(nodes: &[Node], pipes: &[Pipe]) -> Result<(IncidenceMatrix, IncidenceMatrix), NetworkError> {
    let mut column: HashMap<&str, (bool, usize)> = HashMap::with_capacity(nodes.len());
    let (mut nj, mut nf) = (0, 0);
    for n in nodes {
        let slot = if n.is_junction() {
            nj += 1;
            (true, nj - 1)
        } else {
            nf += 1;
            (false, nf - 1)
        };
        column.insert(n.id.as_str(), slot);
    }

    let mut a1 = vec![Vec::with_capacity(2); pipes.len()];
    let mut a2 = vec![Vec::with_capacity(2); pipes.len()];
    for (r, p) in pipes.iter().enumerate() {
        for (id, sign) in [(&p.from, -1i8), (&p.to, 1i8)] {
            let &(is_junction, c) = column
                .get(id.as_str())
                .ok_or_else(|| NetworkError::DanglingNode { pipe: p.id.clone(), node: id.clone() })?;
            if is_junction {
                a1[r].push((c, sign));
            } else {
                a2[r].push((c, sign));
            }
        }
        a1[r].sort_unstable();
        a2[r].sort_unstable();
    }
    Ok((
        IncidenceMatrix { rows: pipes.len(), cols: nj, entries: a1 },
        IncidenceMatrix { rows: pipes.len(), cols: nf, entries: a2 },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Material;

    fn pipe(id: &str, from: &str, to: &str) -> Pipe {
        Pipe::new(id, from, to, 10.0, 0.3, Material::Dicl, 0.1)
    }

    #[test]
    fn reservoir_to_junction_sign_convention() {
        let nodes = vec![Node::fixed_head("R", 100.0, 100.0), Node::junction("J", 50.0)];
        let (a1, a2) = build_incidence(&nodes, &[pipe("P", "R", "J")]).unwrap();
        assert_eq!(a1.to_dense(), vec![vec![1]]);
        assert_eq!(a2.to_dense(), vec![vec![-1]]);
    }

    #[test]
    fn triangle_with_reservoir_spur() {
        // R -> A, A -> B, B -> C, C -> A
        let nodes = vec![
            Node::junction("A", 0.0),
            Node::junction("B", 0.0),
            Node::junction("C", 0.0),
            Node::fixed_head("R", 10.0, 10.0),
        ];
        let pipes = [pipe("s", "R", "A"), pipe("ab", "A", "B"), pipe("bc", "B", "C"), pipe("ca", "C", "A")];
        let (a1, a2) = build_incidence(&nodes, &pipes).unwrap();
        // Hand-enumerated: row = pipe, columns A B C.
        let expected_a1 = vec![vec![1, 0, 0], vec![-1, 1, 0], vec![0, -1, 1], vec![1, 0, -1]];
        assert_eq!(a1.to_dense(), expected_a1);
        assert_eq!(a2.to_dense(), vec![vec![-1], vec![0], vec![0], vec![0]]);
        // Column sums: A has two inflows and one outflow, B and C balance.
        let col_sums: Vec<i32> =
            (0..3).map(|c| (0..4).map(|r| i32::from(a1.get(r, c))).sum()).collect();
        assert_eq!(col_sums, vec![1, 0, 0]);
    }

    #[test]
    fn reversing_pipe_negates_only_its_row() {
        let nodes = vec![Node::junction("A", 0.0), Node::junction("B", 0.0), Node::fixed_head("R", 1.0, 1.0)];
        let fwd = [pipe("1", "R", "A"), pipe("2", "A", "B")];
        let rev = [pipe("1", "R", "A"), pipe("2", "B", "A")];
        let (f1, _) = build_incidence(&nodes, &fwd).unwrap();
        let (r1, _) = build_incidence(&nodes, &rev).unwrap();
        let (f, r) = (f1.to_dense(), r1.to_dense());
        assert_eq!(f[0], r[0]);
        assert_eq!(f[1].iter().map(|x| -x).collect::<Vec<_>>(), r[1]);
    }

    #[test]
    fn dangling_reference_names_node() {
        let nodes = vec![Node::fixed_head("R", 1.0, 1.0)];
        let err = build_incidence(&nodes, &[pipe("P", "R", "J9")]).unwrap_err();
        assert_eq!(err, NetworkError::DanglingNode { pipe: "P".into(), node: "J9".into() });
    }

    #[test]
    fn products_agree_with_dense() {
        let nodes = vec![Node::junction("A", 0.0), Node::junction("B", 0.0), Node::fixed_head("R", 1.0, 1.0)];
        let (a1, _) = build_incidence(&nodes, &[pipe("1", "R", "A"), pipe("2", "A", "B")]).unwrap();
        assert_eq!(a1.mul(&[3.0, 5.0]), vec![3.0, 2.0]);
        assert_eq!(a1.transpose_mul(&[1.0, 0.25]), vec![0.75, 0.25]);
    }
}
