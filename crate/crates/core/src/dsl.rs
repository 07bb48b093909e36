//! Parser for group specifications such as `C8`, `D4`, `C4xC4`, `C4:inv:C2`.
//!
//! ```text
//! group := atom (('x' | ':' name ':') atom)*     left-associative
//! atom  := ('C' | 'D' | 'S') integer
//! ```
//!
//! Named actions for `:name:` are `inv` (inversion through the sign
//! homomorphism of the right factor) and `id` (trivial action).

use crate::error::{Error, Result};
use crate::group::FiniteGroup;

struct Atom {
    group: FiniteGroup,
    /// Homomorphism to C_2 used by the `inv` action; `None` if the atom has
    /// no canonical one (odd cyclic groups).
    parity: Option<Vec<u8>>,
}

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn atom(&mut self) -> Result<Atom> {
        let start = self.pos;
        let kind = match self.peek() {
            Some(c @ (b'C' | b'D' | b'S')) => c,
            Some(c) => return self.err(format!("expected C, D or S, found '{}'", c as char)),
            None => return self.err("expected a group atom"),
        };
        self.pos += 1;
        let digits_start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if digits_start == self.pos {
            return self.err("expected an integer");
        }
        let text = std::str::from_utf8(&self.src[digits_start..self.pos]).unwrap();
        let n: usize = match text.parse() {
            Ok(n) => n,
            Err(_) => {
                self.pos = digits_start;
                return self.err(format!("integer '{text}' out of range"));
            }
        };
        let wrap = |e: Error| Error::Parse {
            pos: start,
            msg: e.to_string(),
        };
        Ok(match kind {
            b'C' => Atom {
                group: FiniteGroup::cyclic(n).map_err(wrap)?,
                parity: n.is_multiple_of(2).then(|| (0..n).map(|k| (k % 2) as u8).collect()),
            },
            b'D' => Atom {
                group: FiniteGroup::dihedral(n).map_err(wrap)?,
                parity: Some((0..2 * n).map(|id| (id % 2) as u8).collect()),
            },
            _ => {
                if n > 7 {
                    self.pos = start;
                    return self.err("symmetric groups are limited to S7");
                }
                Atom {
                    group: FiniteGroup::symmetric(n).map_err(wrap)?,
                    parity: Some(FiniteGroup::symmetric_parity(n)),
                }
            }
        })
    }

    fn name(&mut self) -> Result<String> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected an action name");
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }
}

/// Parses a group specification string.
pub fn parse_group(spec: &str) -> Result<FiniteGroup> {
    let mut cur = Cursor {
        src: spec.as_bytes(),
        pos: 0,
    };
    let mut acc = cur.atom()?.group;
    while let Some(c) = cur.peek() {
        let op_pos = cur.pos;
        match c {
            b'x' => {
                cur.pos += 1;
                let rhs = cur.atom()?;
                acc = FiniteGroup::direct_product(&acc, &rhs.group).map_err(|e| Error::Parse {
                    pos: op_pos,
                    msg: e.to_string(),
                })?;
            }
            b':' => {
                cur.pos += 1;
                let name_pos = cur.pos;
                let name = cur.name()?;
                if cur.peek() != Some(b':') {
                    return cur.err("expected ':' after action name");
                }
                cur.pos += 1;
                let rhs = cur.atom()?;
                let action = named_action(&name, &acc, &rhs).map_err(|msg| Error::Parse {
                    pos: name_pos,
                    msg,
                })?;
                acc = FiniteGroup::semidirect_product(&acc, &rhs.group, &action).map_err(|e| {
                    Error::Parse {
                        pos: name_pos,
                        msg: e.to_string(),
                    }
                })?;
            }
            other => return cur.err(format!("unexpected '{}'", other as char)),
        }
    }
    Ok(acc)
}

fn named_action(name: &str, g: &FiniteGroup, h: &Atom) -> std::result::Result<Vec<Vec<usize>>, String> {
    let n = g.order();
    let identity: Vec<usize> = (0..n).collect();
    match name {
        "id" => Ok(vec![identity; h.group.order()]),
        "inv" => {
            let parity = h
                .parity
                .as_ref()
                .ok_or_else(|| "right factor has no homomorphism onto C2 for 'inv'".to_string())?;
            let inverse: Vec<usize> = (0..n).map(|x| g.inv(x)).collect();
            Ok(parity
                .iter()
                .map(|&p| if p == 0 { identity.clone() } else { inverse.clone() })
                .collect())
        }
        other => Err(format!("unknown action '{other}'")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atoms_and_products() {
        assert_eq!(parse_group("C8").unwrap().order(), 8);
        assert_eq!(parse_group("D4").unwrap().order(), 8);
        assert_eq!(parse_group("S3").unwrap().order(), 6);
        let g = parse_group("C4xC4").unwrap();
        assert_eq!(g.order(), 16);
        assert_eq!(g.word_ball(1).len(), 9);
        assert_eq!(parse_group("C2xC3xC2").unwrap().order(), 12);
    }

    #[test]
    fn semidirect_inv_matches_dihedral() {
        let g = parse_group("C4:inv:C2").unwrap();
        assert_eq!(g.table(), FiniteGroup::dihedral(4).unwrap().table());
        let id = parse_group("C3:id:C2").unwrap();
        assert_eq!(id.table(), parse_group("C3xC2").unwrap().table());
    }

    #[test]
    fn errors_carry_positions() {
        match parse_group("C4xQ2") {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 3),
            other => panic!("{other:?}"),
        }
        match parse_group("C") {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_group("C0"), Err(Error::Parse { pos: 0, .. })));
        assert!(matches!(parse_group("S8"), Err(Error::Parse { .. })));
        assert!(matches!(parse_group("C4:foo:C2"), Err(Error::Parse { pos: 3, .. })));
        // inversion is not an automorphism of a non-abelian group
        assert!(matches!(parse_group("D3:inv:C2"), Err(Error::Parse { .. })));
        // C3 has no surjection onto C2
        assert!(matches!(parse_group("C4:inv:C3"), Err(Error::Parse { .. })));
        assert!(parse_group("C4 ").is_err());
    }
}
