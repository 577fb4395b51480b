use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::ChemError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Small integer code used in hashes and one-hot features.
    pub fn code(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }

    /// Contribution to the valence sum; aromatic bonds count as one and the
    /// extra pi electron is added per atom.
    pub(crate) fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

impl fmt::Display for BondOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BondOrder::Single => "single",
            BondOrder::Double => "double",
            BondOrder::Triple => "triple",
            BondOrder::Aromatic => "aromatic",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Atom {
    /// Element symbol with standard capitalization ("C", "Cl", "Na").
    pub symbol: String,
    pub charge: i32,
    /// Hydrogens written inside a bracket atom.
    pub explicit_h: u32,
    /// Hydrogens implied by the organic-subset valence rules.
    pub implicit_h: u32,
    pub aromatic: bool,
    pub bracket: bool,
}

impl Atom {
    pub fn organic(symbol: &str, aromatic: bool) -> Self {
        Atom {
            symbol: symbol.to_string(),
            charge: 0,
            explicit_h: 0,
            implicit_h: 0,
            aromatic,
            bracket: false,
        }
    }

    pub fn total_h(&self) -> u32 {
        self.explicit_h + self.implicit_h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Bond {
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
    pub in_ring: bool,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.begin == atom {
            self.end
        } else {
            self.begin
        }
    }
}

/// Attributed molecular graph. Construction validates the structural
/// invariants, so every `Molecule` in circulation is connected, simple and
/// has consistent aromatic flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    source: String,
    // (neighbor atom, bond index) per atom, in bond insertion order.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Molecule {
    /// Build a molecule from atoms and bonds. Ring flags on the supplied
    /// bonds are ignored and recomputed.
    pub fn from_parts(
        atoms: Vec<Atom>,
        bonds: Vec<Bond>,
        source: impl Into<String>,
    ) -> Result<Self, ChemError> {
        let n = atoms.len();
        if n == 0 {
            return Err(ChemError::InvalidMolecule("molecule has no atoms".into()));
        }
        let mut seen = HashSet::new();
        let mut adjacency = vec![Vec::new(); n];
        for (i, b) in bonds.iter().enumerate() {
            if b.begin >= n || b.end >= n {
                return Err(ChemError::InvalidMolecule(format!(
                    "bond {i} references atom outside 0..{n}"
                )));
            }
            if b.begin == b.end {
                return Err(ChemError::InvalidMolecule(format!(
                    "bond {i} is a self-loop on atom {}",
                    b.begin
                )));
            }
            let key = (b.begin.min(b.end), b.begin.max(b.end));
            if !seen.insert(key) {
                return Err(ChemError::InvalidMolecule(format!(
                    "duplicate bond between atoms {} and {}",
                    key.0, key.1
                )));
            }
            if b.order == BondOrder::Aromatic && !(atoms[b.begin].aromatic && atoms[b.end].aromatic)
            {
                return Err(ChemError::InvalidMolecule(format!(
                    "aromatic bond {i} joins a non-aromatic atom"
                )));
            }
            adjacency[b.begin].push((b.end, i));
            adjacency[b.end].push((b.begin, i));
        }
        let mut mol = Molecule {
            atoms,
            bonds,
            source: source.into(),
            adjacency,
        };
        if !mol.is_connected() {
            return Err(ChemError::InvalidMolecule(
                "molecular graph is disconnected".into(),
            ));
        }
        mol.assign_ring_flags();
        Ok(mol)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    /// `(neighbor, bond index)` pairs of an atom.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn atom_in_ring(&self, atom: usize) -> bool {
        self.adjacency[atom]
            .iter()
            .any(|&(_, b)| self.bonds[b].in_ring)
    }

    /// Relabel atoms: atom `i` of `self` becomes atom `perm[i]` of the result.
    /// Bond order in the list follows the original bond order.
    pub fn permuted(&self, perm: &[usize]) -> Result<Molecule, ChemError> {
        let n = self.atoms.len();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if perm.len() != n || check.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(ChemError::InvalidMolecule(
                "permutation is not a bijection on atom indices".into(),
            ));
        }
        let mut atoms = vec![None; n];
        for (i, a) in self.atoms.iter().enumerate() {
            atoms[perm[i]] = Some(a.clone());
        }
        let atoms = atoms.into_iter().map(|a| a.expect("bijection")).collect();
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                begin: perm[b.begin],
                end: perm[b.end],
                ..*b
            })
            .collect();
        Molecule::from_parts(atoms, bonds, self.source.clone())
    }

    /// Induced subgraph on `keep` (sorted ascending), preserving atom attributes.
    pub fn subgraph(&self, keep: &[usize]) -> Result<Molecule, ChemError> {
        let mut remap = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let atoms = keep.iter().map(|&i| self.atoms[i].clone()).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|b| remap[b.begin] != usize::MAX && remap[b.end] != usize::MAX)
            .map(|b| Bond {
                begin: remap[b.begin],
                end: remap[b.end],
                ..*b
            })
            .collect();
        Molecule::from_parts(atoms, bonds, self.source.clone())
    }

    fn is_connected(&self) -> bool {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(w, _) in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    }

    /// A bond is in a ring iff it is not a bridge.
    fn assign_ring_flags(&mut self) {
        let n = self.atoms.len();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut is_bridge = vec![false; self.bonds.len()];
        let mut timer = 0;
        // Iterative DFS: (vertex, bond used to enter, next adjacency slot).
        let mut stack: Vec<(usize, usize, usize)> = vec![(0, usize::MAX, 0)];
        disc[0] = 0;
        low[0] = 0;
        timer += 1;
        while let Some(&mut (v, parent_bond, ref mut slot)) = stack.last_mut() {
            if *slot < self.adjacency[v].len() {
                let (w, b) = self.adjacency[v][*slot];
                *slot += 1;
                if b == parent_bond {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, b, 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(u, _, _)) = stack.last() {
                    low[u] = low[u].min(low[v]);
                    if low[v] > disc[u] {
                        is_bridge[parent_bond] = true;
                    }
                }
            }
        }
        for (b, bridge) in self.bonds.iter_mut().zip(is_bridge) {
            b.in_ring = !bridge;
        }
    }
}

/// Every element symbol accepted inside a bracket atom.
pub(crate) const ELEMENTS: &[&str] = &[
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

pub(crate) fn is_element(symbol: &str) -> bool {
    ELEMENTS.contains(&symbol)
}

/// Standard valences of the organic subset, lowest first.
pub(crate) fn standard_valences(symbol: &str) -> Option<&'static [u32]> {
    Some(match symbol {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        _ => return None,
    })
}
