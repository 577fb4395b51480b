use crate::numeric::Tensor;

use super::{ChemError, Molecule};

/// One-hot element alphabet; anything else falls in the trailing "other" slot.
pub const ELEMENT_ALPHABET: [&str; 10] = ["B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"];
const MAX_DEGREE: usize = 5;
const MAX_H: usize = 4;

/// element (10 + other) + degree 0..=5 + charge + aromatic + in-ring + H 0..=4
pub const ATOM_FEATURE_DIM: usize = ELEMENT_ALPHABET.len() + 1 + (MAX_DEGREE + 1) + 3 + (MAX_H + 1);
/// bond order one-hot + in-ring
pub const BOND_FEATURE_DIM: usize = 5;

#[derive(Debug, Clone, Copy, Default)]
pub struct FeaturizeOptions {
    /// Map elements outside the alphabet to the "other" slot instead of failing.
    pub permissive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedEdge {
    pub source: usize,
    pub target: usize,
    pub features: Vec<f64>,
    pub reverse: usize,
}

/// Directed-edge view of a molecule. Bond `b` yields edges `2b` (begin to
/// end) and `2b + 1` (end to begin), so `reverse` is `e ^ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedEdgeGraph {
    pub node_features: Tensor,
    pub edges: Vec<DirectedEdge>,
}

impl DirectedEdgeGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Disjoint union treated as a single graph (one readout component).
    pub fn disjoint_union(&self, other: &DirectedEdgeGraph) -> DirectedEdgeGraph {
        let offset_nodes = self.num_nodes();
        let offset_edges = self.num_edges();
        let node_features = Tensor::concat_rows(&[&self.node_features, &other.node_features])
            .expect("node feature widths agree");
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|e| DirectedEdge {
            source: e.source + offset_nodes,
            target: e.target + offset_nodes,
            features: e.features.clone(),
            reverse: e.reverse + offset_edges,
        }));
        DirectedEdgeGraph {
            node_features,
            edges,
        }
    }
}

pub fn atom_features(mol: &Molecule, atom: usize, opts: FeaturizeOptions) -> Result<Vec<f64>, ChemError> {
    let a = &mol.atoms()[atom];
    let mut f = vec![0.0; ATOM_FEATURE_DIM];
    let elem = match ELEMENT_ALPHABET.iter().position(|&s| s == a.symbol) {
        Some(i) => i,
        None if opts.permissive => ELEMENT_ALPHABET.len(),
        None => {
            return Err(ChemError::UnsupportedElement {
                symbol: a.symbol.clone(),
                allowed: ELEMENT_ALPHABET.join(","),
            })
        }
    };
    f[elem] = 1.0;
    let mut off = ELEMENT_ALPHABET.len() + 1;
    f[off + mol.degree(atom).min(MAX_DEGREE)] = 1.0;
    off += MAX_DEGREE + 1;
    f[off] = f64::from(a.charge);
    f[off + 1] = if a.aromatic { 1.0 } else { 0.0 };
    f[off + 2] = if mol.atom_in_ring(atom) { 1.0 } else { 0.0 };
    off += 3;
    f[off + (a.total_h() as usize).min(MAX_H)] = 1.0;
    Ok(f)
}

pub fn featurize(mol: &Molecule) -> Result<DirectedEdgeGraph, ChemError> {
    featurize_with(mol, FeaturizeOptions::default())
}

pub fn featurize_with(mol: &Molecule, opts: FeaturizeOptions) -> Result<DirectedEdgeGraph, ChemError> {
    let n = mol.num_atoms();
    let mut data = Vec::with_capacity(n * ATOM_FEATURE_DIM);
    for i in 0..n {
        data.extend(atom_features(mol, i, opts)?);
    }
    let node_features =
        Tensor::new(vec![n, ATOM_FEATURE_DIM], data).expect("feature buffer sized by construction");
    let mut edges = Vec::with_capacity(2 * mol.num_bonds());
    for (b, bond) in mol.bonds().iter().enumerate() {
        let mut feat = vec![0.0; BOND_FEATURE_DIM];
        feat[bond.order.code()] = 1.0;
        feat[4] = if bond.in_ring { 1.0 } else { 0.0 };
        edges.push(DirectedEdge {
            source: bond.begin,
            target: bond.end,
            features: feat.clone(),
            reverse: 2 * b + 1,
        });
        edges.push(DirectedEdge {
            source: bond.end,
            target: bond.begin,
            features: feat,
            reverse: 2 * b,
        });
    }
    Ok(DirectedEdgeGraph {
        node_features,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    #[test]
    fn methane_has_one_row_no_edges() {
        let g = featurize(&parse_smiles("C").unwrap()).unwrap();
        assert_eq!(g.node_features.shape(), &[1, ATOM_FEATURE_DIM]);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn ethanol_edges_are_involutive() {
        let g = featurize(&parse_smiles("CCO").unwrap()).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 4);
        for (i, e) in g.edges.iter().enumerate() {
            assert_ne!(e.reverse, i);
            assert_eq!(g.edges[e.reverse].reverse, i);
            assert_eq!(g.edges[e.reverse].source, e.target);
            assert_eq!(g.edges[e.reverse].features, e.features);
        }
    }

    #[test]
    fn benzene_rows_identical() {
        let g = featurize(&parse_smiles("c1ccccc1").unwrap()).unwrap();
        let first = g.node_features.row(0).to_vec();
        for r in 1..6 {
            assert_eq!(g.node_features.row(r), first.as_slice());
        }
    }

    #[test]
    fn feature_layout() {
        let g = featurize(&parse_smiles("C[N+](C)(C)C").unwrap()).unwrap();
        let n = g.node_features.row(1);
        assert_eq!(n[2], 1.0); // N
        assert_eq!(n[11 + 4], 1.0); // degree 4
        assert_eq!(n[17], 1.0); // charge +1
        assert_eq!(n[20], 1.0); // zero H
        assert_eq!(g.edges[0].features, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unsupported_element() {
        let m = parse_smiles("C[Si](C)(C)C").unwrap();
        let err = featurize(&m).unwrap_err();
        assert!(err.to_string().contains("Si"));
        let g = featurize_with(&m, FeaturizeOptions { permissive: true }).unwrap();
        assert_eq!(g.node_features.row(1)[10], 1.0);
    }
}
