//! Ring-system scaffolds for scaffold-grouped dataset splits.

use std::fmt::Write as _;

use serde::Serialize;

use crate::hash::StableHasher;

use super::Molecule;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Scaffold {
    /// Empty for acyclic molecules.
    pub canonical_key: String,
    pub ring_atom_count: usize,
}

impl Scaffold {
    pub fn is_empty(&self) -> bool {
        self.canonical_key.is_empty()
    }
}

/// Indices of the atoms that survive repeated removal of non-ring atoms with
/// at most one remaining neighbor. Empty for acyclic molecules.
pub fn scaffold_atoms(mol: &Molecule) -> Vec<usize> {
    let n = mol.num_atoms();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|i| mol.degree(i)).collect();
    let in_ring: Vec<bool> = (0..n).map(|i| mol.atom_in_ring(i)).collect();
    let mut queue: Vec<usize> = (0..n).filter(|&i| !in_ring[i] && degree[i] <= 1).collect();
    while let Some(v) = queue.pop() {
        if !alive[v] {
            continue;
        }
        alive[v] = false;
        for &(w, _) in mol.neighbors(v) {
            if alive[w] {
                degree[w] -= 1;
                if !in_ring[w] && degree[w] <= 1 {
                    queue.push(w);
                }
            }
        }
    }
    (0..n).filter(|&i| alive[i]).collect()
}

/// The scaffold as a molecule of its own, or `None` for acyclic input.
pub fn scaffold_molecule(mol: &Molecule) -> Option<Molecule> {
    let keep = scaffold_atoms(mol);
    if keep.is_empty() {
        return None;
    }
    Some(
        mol.subgraph(&keep)
            .expect("pruning leaves keeps the ring system connected"),
    )
}

pub fn murcko_scaffold(mol: &Molecule) -> Scaffold {
    match scaffold_molecule(mol) {
        None => Scaffold {
            canonical_key: String::new(),
            ring_atom_count: 0,
        },
        Some(core) => Scaffold {
            canonical_key: canonical_key(&core),
            ring_atom_count: (0..core.num_atoms()).filter(|&i| core.atom_in_ring(i)).count(),
        },
    }
}

/// Relabeling-invariant key from iterative neighborhood refinement: sorted
/// final atom codes, then sorted bond codes.
pub fn canonical_key(mol: &Molecule) -> String {
    let n = mol.num_atoms();
    let mut codes: Vec<u64> = (0..n)
        .map(|i| {
            let a = &mol.atoms()[i];
            let mut h = StableHasher::new();
            h.write_bytes(a.symbol.as_bytes())
                .write(mol.degree(i) as u64)
                .write_i64(i64::from(a.charge))
                .write(u64::from(a.aromatic))
                .write(u64::from(mol.atom_in_ring(i)));
            h.finish()
        })
        .collect();
    let mut env = Vec::new();
    for _ in 0..n {
        let next: Vec<u64> = (0..n)
            .map(|v| {
                env.clear();
                env.extend(
                    mol.neighbors(v)
                        .iter()
                        .map(|&(w, b)| (mol.bonds()[b].order.code() as u64, codes[w])),
                );
                env.sort_unstable();
                let mut h = StableHasher::new();
                h.write(codes[v]);
                for &(o, c) in &env {
                    h.write(o).write(c);
                }
                h.finish()
            })
            .collect();
        codes = next;
    }
    let mut bond_codes: Vec<u64> = mol
        .bonds()
        .iter()
        .map(|b| {
            let (lo, hi) = {
                let (x, y) = (codes[b.begin], codes[b.end]);
                (x.min(y), x.max(y))
            };
            let mut h = StableHasher::new();
            h.write(lo).write(hi).write(b.order.code() as u64);
            h.finish()
        })
        .collect();
    let mut atom_codes = codes;
    atom_codes.sort_unstable();
    bond_codes.sort_unstable();
    let mut key = String::with_capacity(17 * (atom_codes.len() + bond_codes.len()) + 1);
    for (i, c) in atom_codes.iter().enumerate() {
        if i > 0 {
            key.push('.');
        }
        write!(key, "{c:016x}").unwrap();
    }
    key.push('|');
    for (i, c) in bond_codes.iter().enumerate() {
        if i > 0 {
            key.push('.');
        }
        write!(key, "{c:016x}").unwrap();
    }
    key
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    fn key(s: &str) -> String {
        murcko_scaffold(&parse_smiles(s).unwrap()).canonical_key
    }

    #[test]
    fn acyclic_is_empty() {
        assert_eq!(key("CCO"), "");
        assert_eq!(key("C"), "");
        assert_eq!(key("CC(C)(C)CC(=O)N"), "");
    }

    #[test]
    fn side_chains_removed() {
        assert_eq!(key("c1ccccc1CC"), key("c1ccccc1"));
        assert_eq!(key("CCc1ccc(O)cc1"), key("c1ccccc1"));
        assert_ne!(key("c1ccccc1"), key("C1CCCCC1"));
        assert_ne!(key("c1ccccc1"), key("c1ccncc1"));
    }

    #[test]
    fn linker_between_rings_kept() {
        let s = murcko_scaffold(&parse_smiles("c1ccccc1CCc1ccccc1C").unwrap());
        assert_eq!(s.ring_atom_count, 12);
        assert_eq!(s.canonical_key, key("c1ccccc1CCc1ccccc1"));
        assert_ne!(s.canonical_key, key("c1ccccc1Cc1ccccc1"));
    }

    #[test]
    fn idempotent_on_scaffold() {
        for s in ["c1ccccc1", "CC1CCC(CC1)c1ccncc1", "O=C1CCCN1Cc1ccccc1"] {
            let m = parse_smiles(s).unwrap();
            let core = scaffold_molecule(&m).unwrap();
            assert_eq!(murcko_scaffold(&core), murcko_scaffold(&m));
        }
    }

    #[test]
    fn relabeling_invariant() {
        let m = parse_smiles("Cc1ccc2ccccc2c1CC1CC1").unwrap();
        let n = m.num_atoms();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        assert_eq!(murcko_scaffold(&m.permuted(&perm).unwrap()), murcko_scaffold(&m));
    }
}
