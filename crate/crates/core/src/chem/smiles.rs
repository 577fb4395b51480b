//! SMILES reader for the 2D-topology subset used throughout the crate.
//!
//! Supported: organic-subset atoms, bracket atoms (isotope, charge, H count),
//! branches, ring closures `0-9` and `%nn`, and the bond symbols `- = # :`.
//! Stereo markers (`/`, `\`, `@`) are accepted and dropped with a warning.

use std::collections::BTreeMap;

use thiserror::Error;

use super::molecule::{is_element, standard_valences, Atom, Bond, BondOrder, Molecule};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("empty SMILES input")]
    Empty,
    #[error("non-ASCII byte at offset {offset}")]
    NonAscii { offset: usize },
    #[error("unbalanced parenthesis at offset {offset}")]
    UnbalancedParenthesis { offset: usize },
    #[error("unmatched ring-closure {label} at offset {offset}")]
    UnmatchedRingClosure { label: u32, offset: usize },
    #[error("unknown element token '{token}' at offset {offset}")]
    UnknownElement { token: String, offset: usize },
    #[error("multi-component SMILES ('.') at offset {offset} is not supported")]
    MultiComponent { offset: usize },
    #[error("unexpected character '{ch}' at offset {offset}")]
    UnexpectedCharacter { ch: char, offset: usize },
    #[error("invalid bond at offset {offset}: {reason}")]
    InvalidBond { offset: usize, reason: String },
    #[error("malformed bracket atom at offset {offset}")]
    MalformedBracket { offset: usize },
}

impl SmilesError {
    /// Byte offset of the offending token, if there is one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            SmilesError::Empty => None,
            SmilesError::NonAscii { offset }
            | SmilesError::UnbalancedParenthesis { offset }
            | SmilesError::UnmatchedRingClosure { offset, .. }
            | SmilesError::UnknownElement { offset, .. }
            | SmilesError::MultiComponent { offset }
            | SmilesError::UnexpectedCharacter { offset, .. }
            | SmilesError::InvalidBond { offset, .. }
            | SmilesError::MalformedBracket { offset } => Some(*offset),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingBond {
    order: BondOrder,
    offset: usize,
}

#[derive(Debug)]
struct OpenRing {
    atom: usize,
    bond: Option<PendingBond>,
    offset: usize,
}

#[derive(Debug, Clone, Copy)]
struct RawBond {
    begin: usize,
    end: usize,
    order: BondOrder,
    // true when the order came from the default rule rather than a symbol
    implicit: bool,
}

struct Parser<'a> {
    text: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<RawBond>,
    prev: Option<usize>,
    pending: Option<PendingBond>,
    branches: Vec<(usize, usize)>,
    rings: BTreeMap<u32, OpenRing>,
    stereo_seen: bool,
}

/// Parse a single-component SMILES string.
pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    if text.is_empty() {
        return Err(SmilesError::Empty);
    }
    if let Some(offset) = text.bytes().position(|b| !b.is_ascii()) {
        return Err(SmilesError::NonAscii { offset });
    }
    let mut p = Parser {
        text: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        prev: None,
        pending: None,
        branches: Vec::new(),
        rings: BTreeMap::new(),
        stereo_seen: false,
    };
    p.run()?;
    if p.stereo_seen {
        log::warn!("stereo markers in '{text}' were ignored");
    }
    p.finish(text)
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            let offset = self.pos;
            match c {
                b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I' => {
                    let next = self.text.get(self.pos + 1).copied();
                    let symbol = match (c, next) {
                        (b'C', Some(b'l')) => "Cl",
                        (b'B', Some(b'r')) => "Br",
                        _ => std::str::from_utf8(&self.text[offset..offset + 1]).unwrap(),
                    };
                    self.pos += symbol.len();
                    self.add_atom(Atom::organic(symbol, false), offset)?;
                }
                b'b' | b'c' | b'n' | b'o' | b'p' | b's' => {
                    let symbol = (c as char).to_ascii_uppercase().to_string();
                    self.pos += 1;
                    self.add_atom(Atom::organic(&symbol, true), offset)?;
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom, offset)?;
                }
                b'(' => {
                    let Some(prev) = self.prev else {
                        return Err(SmilesError::UnbalancedParenthesis { offset });
                    };
                    if self.pending.is_some() {
                        return Err(SmilesError::InvalidBond {
                            offset,
                            reason: "bond symbol before '('".into(),
                        });
                    }
                    self.branches.push((prev, offset));
                    self.pos += 1;
                }
                b')' => {
                    let Some((atom, _)) = self.branches.pop() else {
                        return Err(SmilesError::UnbalancedParenthesis { offset });
                    };
                    if self.pending.is_some() {
                        return Err(SmilesError::InvalidBond {
                            offset,
                            reason: "dangling bond symbol before ')'".into(),
                        });
                    }
                    if self.text.get(offset.wrapping_sub(1)) == Some(&b'(') {
                        return Err(SmilesError::UnbalancedParenthesis { offset });
                    }
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if self.pending.is_some() {
                        return Err(SmilesError::InvalidBond {
                            offset,
                            reason: "two consecutive bond symbols".into(),
                        });
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        b'/' | b'\\' => {
                            self.stereo_seen = true;
                            BondOrder::Single
                        }
                        _ => BondOrder::Single,
                    };
                    self.pending = Some(PendingBond { order, offset });
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    self.pos += 1;
                    self.ring_closure(u32::from(c - b'0'), offset)?;
                }
                b'%' => {
                    let digits = self.text.get(self.pos + 1..self.pos + 3);
                    let label = match digits {
                        Some(d) if d.iter().all(u8::is_ascii_digit) => {
                            u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0')
                        }
                        _ => return Err(SmilesError::UnexpectedCharacter { ch: '%', offset }),
                    };
                    self.pos += 3;
                    self.ring_closure(label, offset)?;
                }
                b'.' => return Err(SmilesError::MultiComponent { offset }),
                other => {
                    return Err(SmilesError::UnexpectedCharacter {
                        ch: other as char,
                        offset,
                    })
                }
            }
        }
        if let Some(&(_, offset)) = self.branches.last() {
            return Err(SmilesError::UnbalancedParenthesis { offset });
        }
        if let Some((&label, ring)) = self.rings.iter().next() {
            return Err(SmilesError::UnmatchedRingClosure {
                label,
                offset: ring.offset,
            });
        }
        if let Some(b) = self.pending {
            return Err(SmilesError::InvalidBond {
                offset: b.offset,
                reason: "dangling bond symbol at end of input".into(),
            });
        }
        Ok(())
    }

    fn add_atom(&mut self, atom: Atom, offset: usize) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        match self.prev {
            Some(prev) => {
                let pending = self.pending.take();
                self.push_bond(prev, idx, pending, offset)?;
            }
            None => {
                if let Some(b) = self.pending {
                    return Err(SmilesError::InvalidBond {
                        offset: b.offset,
                        reason: "bond symbol before the first atom".into(),
                    });
                }
            }
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn push_bond(
        &mut self,
        a: usize,
        b: usize,
        explicit: Option<PendingBond>,
        offset: usize,
    ) -> Result<(), SmilesError> {
        if a == b {
            return Err(SmilesError::InvalidBond {
                offset,
                reason: "ring closure onto the same atom".into(),
            });
        }
        if self
            .bonds
            .iter()
            .any(|r| (r.begin == a && r.end == b) || (r.begin == b && r.end == a))
        {
            return Err(SmilesError::InvalidBond {
                offset,
                reason: format!("duplicate bond between atoms {a} and {b}"),
            });
        }
        let both_aromatic = self.atoms[a].aromatic && self.atoms[b].aromatic;
        let (order, implicit) = match explicit {
            Some(p) => {
                if p.order == BondOrder::Aromatic && !both_aromatic {
                    return Err(SmilesError::InvalidBond {
                        offset: p.offset,
                        reason: "aromatic bond between non-aromatic atoms".into(),
                    });
                }
                (p.order, false)
            }
            None if both_aromatic => (BondOrder::Aromatic, true),
            None => (BondOrder::Single, true),
        };
        self.bonds.push(RawBond {
            begin: a,
            end: b,
            order,
            implicit,
        });
        Ok(())
    }

    fn ring_closure(&mut self, label: u32, offset: usize) -> Result<(), SmilesError> {
        let Some(atom) = self.prev else {
            return Err(SmilesError::UnmatchedRingClosure { label, offset });
        };
        let bond = self.pending.take();
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(label, OpenRing { atom, bond, offset });
            }
            Some(open) => {
                let chosen = match (open.bond, bond) {
                    (Some(x), Some(y)) if x.order != y.order => {
                        return Err(SmilesError::InvalidBond {
                            offset,
                            reason: format!("conflicting bond orders on ring closure {label}"),
                        })
                    }
                    (Some(x), _) => Some(x),
                    (None, y) => y,
                };
                self.push_bond(open.atom, atom, chosen, offset)?;
            }
        }
        Ok(())
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let start = self.pos;
        let close = self.text[start..]
            .iter()
            .position(|&b| b == b']')
            .map(|i| start + i)
            .ok_or(SmilesError::MalformedBracket { offset: start })?;
        let body = &self.text[start + 1..close];
        let mut i = 0;
        // isotope, ignored
        while i < body.len() && body[i].is_ascii_digit() {
            i += 1;
        }
        let sym_offset = start + 1 + i;
        let (symbol, aromatic, len) = bracket_symbol(&body[i..]).ok_or_else(|| {
            let end = body[i..]
                .iter()
                .position(|b| !b.is_ascii_alphabetic())
                .map_or(body.len(), |p| i + p);
            SmilesError::UnknownElement {
                token: String::from_utf8_lossy(&body[i..end.max(i)]).into_owned(),
                offset: sym_offset,
            }
        })?;
        i += len;
        while i < body.len() && body[i] == b'@' {
            self.stereo_seen = true;
            i += 1;
            // @TH1, @SP2, @OH12 style classes
            while i < body.len() && body[i].is_ascii_uppercase() && body[i] != b'H' {
                i += 1;
            }
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
        }
        let mut explicit_h = 0;
        if i < body.len() && body[i] == b'H' {
            i += 1;
            explicit_h = 1;
            if i < body.len() && body[i].is_ascii_digit() {
                explicit_h = u32::from(body[i] - b'0');
                i += 1;
            }
        }
        let mut charge: i32 = 0;
        if i < body.len() && (body[i] == b'+' || body[i] == b'-') {
            let sign = if body[i] == b'+' { 1 } else { -1 };
            let sign_byte = body[i];
            i += 1;
            if i < body.len() && body[i].is_ascii_digit() {
                let mut mag = 0i32;
                while i < body.len() && body[i].is_ascii_digit() {
                    mag = mag * 10 + i32::from(body[i] - b'0');
                    i += 1;
                }
                charge = sign * mag;
            } else {
                charge = sign;
                while i < body.len() && body[i] == sign_byte {
                    charge += sign;
                    i += 1;
                }
            }
        }
        if i < body.len() && body[i] == b':' {
            i += 1;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i != body.len() {
            return Err(SmilesError::MalformedBracket { offset: start });
        }
        self.pos = close + 1;
        Ok(Atom {
            symbol,
            charge,
            explicit_h,
            implicit_h: 0,
            aromatic,
            bracket: true,
        })
    }

    fn finish(self, text: &str) -> Result<Molecule, SmilesError> {
        let mut atoms = self.atoms;
        let mut bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|r| Bond {
                begin: r.begin,
                end: r.end,
                order: r.order,
                in_ring: false,
            })
            .collect();
        // First pass only establishes ring membership.
        let probe = Molecule::from_parts(atoms.clone(), bonds.clone(), text).map_err(|e| {
            SmilesError::InvalidBond {
                offset: 0,
                reason: e.to_string(),
            }
        })?;
        // A defaulted bond between two aromatic atoms outside any ring
        // (biphenyl written without '-') is a single bond.
        for (i, raw) in self.bonds.iter().enumerate() {
            if raw.implicit && raw.order == BondOrder::Aromatic && !probe.bonds()[i].in_ring {
                bonds[i].order = BondOrder::Single;
            }
        }
        assign_implicit_hydrogens(&mut atoms, &bonds);
        Molecule::from_parts(atoms, bonds, text).map_err(|e| SmilesError::InvalidBond {
            offset: 0,
            reason: e.to_string(),
        })
    }
}

fn bracket_symbol(body: &[u8]) -> Option<(String, bool, usize)> {
    let first = *body.first()?;
    if first.is_ascii_uppercase() {
        if let Some(&second) = body.get(1) {
            if second.is_ascii_lowercase() {
                let two = format!("{}{}", first as char, second as char);
                if is_element(&two) {
                    return Some((two, false, 2));
                }
            }
        }
        let one = (first as char).to_string();
        return is_element(&one).then_some((one, false, 1));
    }
    // aromatic bracket symbols
    for (tok, sym) in [("se", "Se"), ("as", "As"), ("te", "Te")] {
        if body.starts_with(tok.as_bytes()) {
            return Some((sym.to_string(), true, 2));
        }
    }
    match first {
        b'b' | b'c' | b'n' | b'o' | b'p' | b's' => {
            Some(((first as char).to_ascii_uppercase().to_string(), true, 1))
        }
        _ => None,
    }
}

fn assign_implicit_hydrogens(atoms: &mut [Atom], bonds: &[Bond]) {
    let mut valence = vec![0u32; atoms.len()];
    for b in bonds {
        valence[b.begin] += b.order.valence();
        valence[b.end] += b.order.valence();
    }
    for (atom, &used) in atoms.iter_mut().zip(&valence) {
        if atom.bracket {
            continue;
        }
        let Some(allowed) = standard_valences(&atom.symbol) else {
            continue;
        };
        atom.implicit_h = if atom.aromatic {
            // one valence unit goes to the aromatic system
            allowed[0].saturating_sub(used + 1)
        } else {
            allowed
                .iter()
                .find(|&&v| v >= used)
                .map_or(0, |&v| v - used)
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(m: &Molecule) -> Vec<(usize, usize)> {
        m.bonds().iter().map(|b| (b.begin, b.end)).collect()
    }

    #[test]
    fn methane() {
        let m = parse_smiles("C").unwrap();
        assert_eq!(m.num_atoms(), 1);
        assert_eq!(m.num_bonds(), 0);
        assert_eq!(m.atoms()[0].implicit_h, 4);
    }

    #[test]
    fn ethanol() {
        let m = parse_smiles("CCO").unwrap();
        assert_eq!(m.num_atoms(), 3);
        assert_eq!(pairs(&m), [(0, 1), (1, 2)]);
        assert!(m.bonds().iter().all(|b| b.order == BondOrder::Single));
        let h: Vec<u32> = m.atoms().iter().map(|a| a.implicit_h).collect();
        assert_eq!(h, [3, 2, 1]);
        assert_eq!(m.atoms()[2].symbol, "O");
    }

    #[test]
    fn benzene() {
        let m = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(m.num_atoms(), 6);
        assert_eq!(m.num_bonds(), 6);
        assert!(m.atoms().iter().all(|a| a.aromatic && a.implicit_h == 1));
        assert!(m
            .bonds()
            .iter()
            .all(|b| b.order == BondOrder::Aromatic && b.in_ring));
        assert!(pairs(&m).contains(&(0, 5)));
    }

    #[test]
    fn unclosed_branch_offset() {
        let err = parse_smiles("C(").unwrap_err();
        assert_eq!(err, SmilesError::UnbalancedParenthesis { offset: 1 });
    }

    #[test]
    fn error_kinds_and_offsets() {
        assert_eq!(
            parse_smiles("CC)").unwrap_err(),
            SmilesError::UnbalancedParenthesis { offset: 2 }
        );
        assert_eq!(
            parse_smiles("C1CC").unwrap_err(),
            SmilesError::UnmatchedRingClosure { label: 1, offset: 1 }
        );
        assert_eq!(
            parse_smiles("CC.O").unwrap_err(),
            SmilesError::MultiComponent { offset: 2 }
        );
        assert!(matches!(
            parse_smiles("C[Xx]").unwrap_err(),
            SmilesError::UnknownElement { offset: 2, .. }
        ));
        assert!(matches!(
            parse_smiles("CZ").unwrap_err(),
            SmilesError::UnexpectedCharacter { ch: 'Z', offset: 1 }
        ));
        assert!(matches!(
            parse_smiles("C11").unwrap_err(),
            SmilesError::InvalidBond { .. }
        ));
        assert!(matches!(
            parse_smiles("C1CC1C1").unwrap_err(),
            SmilesError::UnmatchedRingClosure { offset: 6, .. }
        ));
        assert_eq!(parse_smiles("").unwrap_err(), SmilesError::Empty);
        assert!(matches!(
            parse_smiles("C:C").unwrap_err(),
            SmilesError::InvalidBond { .. }
        ));
    }

    #[test]
    fn bracket_atoms() {
        let m = parse_smiles("[NH4+]").unwrap();
        let a = &m.atoms()[0];
        assert_eq!((a.symbol.as_str(), a.charge, a.explicit_h), ("N", 1, 4));
        let m = parse_smiles("C[O-]").unwrap();
        assert_eq!(m.atoms()[1].charge, -1);
        assert_eq!(m.atoms()[1].total_h(), 0);
        let m = parse_smiles("[13CH3][C@@H](O)Cl").unwrap();
        assert_eq!(m.atoms()[0].explicit_h, 3);
        assert_eq!(m.atoms()[1].explicit_h, 1);
        assert_eq!(m.atoms()[3].symbol, "Cl");
        let m = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(m.atoms()[3].explicit_h, 1);
        assert!(m.atoms()[3].aromatic);
        let m = parse_smiles("[Fe+++]").unwrap();
        assert_eq!(m.atoms()[0].charge, 3);
        let m = parse_smiles("[Na+]").unwrap();
        assert_eq!(m.atoms()[0].symbol, "Na");
    }

    #[test]
    fn bonds_and_rings() {
        let m = parse_smiles("C#N").unwrap();
        assert_eq!(m.bonds()[0].order, BondOrder::Triple);
        assert_eq!(m.atoms()[0].implicit_h, 1);
        let m = parse_smiles("C1CC%12CC1CC%12").unwrap();
        assert_eq!(m.num_bonds(), 8);
        let m = parse_smiles("C=1CCCCC1").unwrap();
        assert_eq!(m.bonds().last().unwrap().order, BondOrder::Double);
        // stereo bonds are plain single bonds
        let m = parse_smiles("F/C=C/F").unwrap();
        assert_eq!(m.bonds()[0].order, BondOrder::Single);
        // biphenyl linker defaults to single
        let m = parse_smiles("c1ccccc1c1ccccc1").unwrap();
        assert_eq!(m.bonds()[6].order, BondOrder::Single);
        assert!(!m.bonds()[6].in_ring);
    }

    #[test]
    fn branches_and_valence() {
        let m = parse_smiles("CC(=O)O").unwrap();
        assert_eq!(pairs(&m), [(0, 1), (1, 2), (1, 3)]);
        let h: Vec<u32> = m.atoms().iter().map(|a| a.implicit_h).collect();
        assert_eq!(h, [3, 0, 0, 1]);
        let m = parse_smiles("CS(=O)(=O)C").unwrap();
        assert_eq!(m.atoms()[1].implicit_h, 0);
        let m = parse_smiles("c1ccncc1").unwrap();
        assert_eq!(m.atoms()[3].implicit_h, 0);
        let m = parse_smiles("c1ccsc1").unwrap();
        assert_eq!(m.atoms()[3].implicit_h, 0);
    }
}
