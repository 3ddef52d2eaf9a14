//! Compositional translation of terms into conditioning channels.
//!
//! A term in a context that flattens to `R^m` and of a type that flattens to
//! `R^n` becomes a channel `m ⇝ n`. Contexts flatten left to right.

use std::ops::Range;

use crate::cond::Channel;
use crate::error::{Error, Result};
use crate::gauss::GaussMap;
use crate::lang::{typecheck, Ctx, Term, Ty, DISCARD};
use crate::numlin::{Matrix, PsdMatrix, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct Denotation {
    pub channel: Channel,
    pub ty: Ty,
}

pub fn denote(ctx: &Ctx, t: &Term) -> Result<Denotation> {
    let ty = typecheck(ctx, t)?;
    let env: Vec<Binding> = ctx
        .layout()
        .into_iter()
        .zip(&ctx.0)
        .map(|((name, range), (_, ty))| Binding { name, range, ty: ty.clone() })
        .collect();
    let channel = Denoter { env, width: ctx.dim() }.term(t)?.0;
    Ok(Denotation { channel, ty })
}

#[derive(Clone, Debug)]
struct Binding {
    name: String,
    range: Range<usize>,
    ty: Ty,
}

struct Denoter {
    env: Vec<Binding>,
    width: usize,
}

impl Denoter {
    /// `⟨f, g⟩ = (f ⊗ g) ∘ copy`.
    fn pairing(&self, f: &Channel, g: &Channel) -> Channel {
        f.tensor(g)
            .compose(&Channel::lift(GaussMap::copy(self.width)))
            .expect("both read the current context")
    }

    fn term(&mut self, t: &Term) -> Result<(Channel, Ty)> {
        let m = self.width;
        match t {
            Term::Var(x) => {
                let b = self
                    .env
                    .iter()
                    .rev()
                    .find(|b| &b.name == x)
                    .ok_or_else(|| Error::Type(format!("unbound variable `{x}`")))?;
                let idx: Vec<usize> = b.range.clone().collect();
                Ok((Channel::lift(GaussMap::selection(m, &idx)), b.ty.clone()))
            }
            Term::Const(c) => Ok((Channel::lift(GaussMap::constant(m, &Vector::from_element(1, *c))), Ty::R)),
            Term::UnitVal => Ok((Channel::lift(GaussMap::discard(m)), Ty::Unit)),
            Term::Normal => {
                let g = GaussMap::new(Matrix::zeros(1, m), Vector::zeros(1), PsdMatrix::identity(1))?;
                Ok((Channel::lift(g), Ty::R))
            }
            Term::Add(a, b) => {
                let (fa, _) = self.term(a)?;
                let (fb, _) = self.term(b)?;
                let sum = Channel::lift(GaussMap::linear(Matrix::from_element(1, 2, 1.0)));
                Ok((sum.compose(&self.pairing(&fa, &fb))?, Ty::R))
            }
            Term::Scale(al, a) => {
                let (fa, _) = self.term(a)?;
                let s = Channel::lift(GaussMap::linear(Matrix::from_element(1, 1, *al)));
                Ok((s.compose(&fa)?, Ty::R))
            }
            Term::Pair(a, b) => {
                let (fa, ta) = self.term(a)?;
                let (fb, tb) = self.term(b)?;
                Ok((self.pairing(&fa, &fb), Ty::pair(ta, tb)))
            }
            Term::Cond(a, b) => {
                let (fa, _) = self.term(a)?;
                let (fb, _) = self.term(b)?;
                let diff = Channel::lift(GaussMap::linear(Matrix::from_row_slice(1, 2, &[1.0, -1.0])));
                let eff = Channel::observe(&Vector::zeros(1)).compose(&diff)?;
                Ok((eff.compose(&self.pairing(&fa, &fb))?, Ty::Unit))
            }
            Term::Let(x, e, body) => {
                let (fe, te) = self.term(e)?;
                let names = if x == DISCARD { vec![] } else { vec![(x.clone(), te.clone())] };
                self.bind(&fe, &te, names, body)
            }
            Term::LetPair(x, y, e, body) => {
                let (fe, te) = self.term(e)?;
                let (tx, ty) = match &te {
                    Ty::Pair(a, b) => ((**a).clone(), (**b).clone()),
                    other => return Err(Error::Type(format!("`{e}` has type {other}, expected a pair"))),
                };
                self.bind(&fe, &te, vec![(x.clone(), tx), (y.clone(), ty)], body)
            }
        }
    }

    /// `⟦body⟧ ∘ (id ⊗ ⟦e⟧) ∘ copy`, with the new coordinates appended.
    fn bind(&mut self, fe: &Channel, te: &Ty, names: Vec<(String, Ty)>, body: &Term) -> Result<(Channel, Ty)> {
        let m = self.width;
        let extend = self.pairing(&Channel::identity(m), fe);
        let saved = self.env.len();
        let mut off = m;
        for (name, ty) in names {
            let d = ty.dim();
            if name != DISCARD {
                self.env.push(Binding { name, range: off..off + d, ty });
            }
            off += d;
        }
        self.width = m + te.dim();
        let result = self.term(body);
        self.width = m;
        self.env.truncate(saved);
        let (fb, tb) = result?;
        Ok((fb.compose(&extend)?, tb))
    }
}
