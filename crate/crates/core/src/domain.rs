//! Stack states and the abstract-state lattice.
//!
//! A [`StackState`] is a stack height plus a partial map from stack positions
//! to the jump destinations they may hold. An [`AbstractState`] maps an entry
//! stack state (the analysis context) to the set of stack states reachable
//! under it. Ordering, join and bottom are pointwise over that map.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::bytecode::{Pc, STACK_LIMIT};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("stack height {0} exceeds the {STACK_LIMIT}-word limit")]
    Height(usize),
    #[error("position s{position} is outside a stack of height {height}")]
    Position { position: usize, height: usize },
    #[error("position s{0} maps to an empty destination set")]
    EmptyImage(usize),
}

/// `⟨n, σ⟩`: position `s_{n-1}` is the top of the stack.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StackState {
    height: usize,
    tracked: BTreeMap<usize, BTreeSet<Pc>>,
}

impl StackState {
    /// A stack of `height` words, none of them holding a known destination.
    pub fn untracked(height: usize) -> Self {
        StackState {
            height,
            tracked: BTreeMap::new(),
        }
    }

    pub fn new(height: usize, tracked: BTreeMap<usize, BTreeSet<Pc>>) -> Result<Self, DomainError> {
        if height > STACK_LIMIT {
            return Err(DomainError::Height(height));
        }
        for (&position, dests) in &tracked {
            if position >= height {
                return Err(DomainError::Position { position, height });
            }
            if dests.is_empty() {
                return Err(DomainError::EmptyImage(position));
            }
        }
        Ok(StackState { height, tracked })
    }

    /// Shorthand constructor; panics if the pairs violate the invariants.
    pub fn from_pairs<I, D>(height: usize, pairs: I) -> Self
    where
        I: IntoIterator<Item = (usize, D)>,
        D: IntoIterator<Item = Pc>,
    {
        let tracked = pairs
            .into_iter()
            .map(|(pos, dests)| (pos, dests.into_iter().collect()))
            .collect();
        Self::new(height, tracked).expect("valid stack state")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn tracked(&self) -> &BTreeMap<usize, BTreeSet<Pc>> {
        &self.tracked
    }

    pub fn get(&self, position: usize) -> Option<&BTreeSet<Pc>> {
        self.tracked.get(&position)
    }

    /// `σ(s_{n-1})`, the destinations a jump here would consume.
    pub fn top_destinations(&self) -> Option<&BTreeSet<Pc>> {
        self.height.checked_sub(1).and_then(|top| self.get(top))
    }

    /// Every destination mentioned anywhere in the state.
    pub fn destinations(&self) -> BTreeSet<Pc> {
        self.tracked.values().flatten().copied().collect()
    }

    /// True when every tracked position of `self` is tracked in `other` with
    /// a superset of destinations, and both agree on height and on which
    /// positions are tracked.
    pub fn covered_by(&self, other: &StackState) -> bool {
        self.height == other.height
            && self.tracked.len() == other.tracked.len()
            && self
                .tracked
                .iter()
                .all(|(pos, dests)| other.get(*pos).is_some_and(|o| dests.is_subset(o)))
    }

    pub(crate) fn set_height(&mut self, height: usize) {
        self.height = height;
        self.tracked.retain(|pos, _| *pos < height);
    }

    pub(crate) fn assign(&mut self, position: usize, dests: Option<BTreeSet<Pc>>) {
        match dests {
            Some(d) if !d.is_empty() => {
                self.tracked.insert(position, d);
            }
            _ => {
                self.tracked.remove(&position);
            }
        }
    }

    pub(crate) fn take(&mut self, position: usize) -> Option<BTreeSet<Pc>> {
        self.tracked.remove(&position)
    }
}

/// Replica order: taller stacks first, then by tracked positions and their
/// destination lists.
impl Ord for StackState {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .height
            .cmp(&self.height)
            .then_with(|| self.tracked.cmp(&other.tracked))
    }
}

impl PartialOrd for StackState {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for StackState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{},{{", self.height)?;
        for (i, (pos, dests)) in self.tracked.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            let list: Vec<String> = dests.iter().map(|d| format!("{d:#x}")).collect();
            write!(f, "s{pos}->{{{}}}", list.join(","))?;
        }
        f.write_str("}>")
    }
}

/// Join semilattice with a least element.
pub trait Lattice: Clone + PartialEq {
    fn bottom() -> Self;
    fn join(&self, other: &Self) -> Self;
    fn leq(&self, other: &Self) -> bool;

    /// `self := self ⊔ other`; returns whether `self` grew.
    fn join_assign(&mut self, other: &Self) -> bool {
        if other.leq(self) {
            return false;
        }
        *self = self.join(other);
        true
    }
}

static NO_STATES: BTreeSet<StackState> = BTreeSet::new();

/// `π : S ⇀ P(S)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct AbstractState {
    entries: BTreeMap<StackState, BTreeSet<StackState>>,
}

impl AbstractState {
    pub const EMPTY: AbstractState = AbstractState {
        entries: BTreeMap::new(),
    };

    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_bottom(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of contexts in the domain.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, context: StackState, state: StackState) -> bool {
        self.entries.entry(context).or_default().insert(state)
    }

    pub fn img(&self, context: &StackState) -> &BTreeSet<StackState> {
        self.entries.get(context).unwrap_or(&NO_STATES)
    }

    pub fn contains_context(&self, context: &StackState) -> bool {
        self.entries.contains_key(context)
    }

    /// The domain, in replica order.
    pub fn contexts(&self) -> impl Iterator<Item = &StackState> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StackState, &BTreeSet<StackState>)> {
        self.entries.iter()
    }

    /// All `(context, state)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (&StackState, &StackState)> {
        self.entries
            .iter()
            .flat_map(|(ctx, states)| states.iter().map(move |s| (ctx, s)))
    }

    pub fn remove_context(&mut self, context: &StackState) -> Option<BTreeSet<StackState>> {
        self.entries.remove(context)
    }
}

impl FromIterator<(StackState, StackState)> for AbstractState {
    fn from_iter<T: IntoIterator<Item = (StackState, StackState)>>(iter: T) -> Self {
        let mut out = AbstractState::new();
        for (ctx, state) in iter {
            out.insert(ctx, state);
        }
        out
    }
}

impl Lattice for AbstractState {
    fn bottom() -> Self {
        AbstractState::new()
    }

    fn join(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (ctx, states) in &other.entries {
            out.entries
                .entry(ctx.clone())
                .or_default()
                .extend(states.iter().cloned());
        }
        out
    }

    fn leq(&self, other: &Self) -> bool {
        self.entries
            .iter()
            .all(|(ctx, states)| other.entries.get(ctx).is_some_and(|o| states.is_subset(o)))
    }

    fn join_assign(&mut self, other: &Self) -> bool {
        let mut changed = false;
        for (ctx, states) in &other.entries {
            let slot = self.entries.entry(ctx.clone()).or_insert_with(|| {
                changed = true;
                BTreeSet::new()
            });
            for s in states {
                changed |= slot.insert(s.clone());
            }
        }
        changed
    }
}

impl fmt::Display for AbstractState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (ctx, states)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            let list: Vec<String> = states.iter().map(ToString::to_string).collect();
            write!(f, "{ctx} => {{{}}}", list.join(", "))?;
        }
        f.write_str("}")
    }
}

/// A lattice extended with an explicit top element.
///
/// The analysis never builds `Top` (the solver starts at bottom and only
/// joins finite maps); it exists so the full lattice can be stated and
/// tested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WithTop<L> {
    Top,
    Value(L),
}

impl<L: Lattice> Lattice for WithTop<L> {
    fn bottom() -> Self {
        WithTop::Value(L::bottom())
    }

    fn join(&self, other: &Self) -> Self {
        match (self, other) {
            (WithTop::Value(a), WithTop::Value(b)) => WithTop::Value(a.join(b)),
            _ => WithTop::Top,
        }
    }

    fn leq(&self, other: &Self) -> bool {
        match (self, other) {
            (_, WithTop::Top) => true,
            (WithTop::Top, WithTop::Value(_)) => false,
            (WithTop::Value(a), WithTop::Value(b)) => a.leq(b),
        }
    }
}

pub fn bottom() -> AbstractState {
    AbstractState::bottom()
}

pub fn img<'a>(pi: &'a AbstractState, s: &StackState) -> &'a BTreeSet<StackState> {
    pi.img(s)
}

pub fn join(p1: &AbstractState, p2: &AbstractState) -> AbstractState {
    p1.join(p2)
}

pub fn leq(p1: &AbstractState, p2: &AbstractState) -> bool {
    p1.leq(p2)
}


#[cfg(test)]
mod tests {
    use super::strategies::*;
    use super::*;
    use proptest::prelude::*;

    fn s(height: usize, pairs: &[(usize, &[Pc])]) -> StackState {
        StackState::from_pairs(height, pairs.iter().map(|(p, d)| (*p, d.iter().copied())))
    }

    fn map(pairs: &[(StackState, &[StackState])]) -> AbstractState {
        pairs
            .iter()
            .flat_map(|(k, vs)| vs.iter().map(move |v| (k.clone(), v.clone())))
            .collect()
    }

    fn pair(k: &StackState, v: &StackState) -> AbstractState {
        [(k.clone(), v.clone())].into_iter().collect()
    }

    #[test]
    fn bottom_is_empty_and_least() {
        let b = bottom();
        assert!(b.is_bottom());
        let k = s(2, &[(1, &[5])]);
        let pi = pair(&k, &k);
        assert_eq!(join(&b, &pi), pi);
        assert!(leq(&b, &pi));
        assert!(img(&b, &k).is_empty());
    }

    #[test]
    fn img_lookup() {
        let k = s(1, &[]);
        let a = s(2, &[(1, &[3])]);
        let pi = pair(&k, &a);
        assert_eq!(img(&pi, &k), &BTreeSet::from([a]));
        assert!(img(&pi, &s(3, &[])).is_empty());
    }

    #[test]
    fn join_keeps_both_entry_contexts() {
        let c1 = s(7, &[(5, &[0x954])]);
        let c2 = s(3, &[(1, &[0x142])]);
        let j = join(&pair(&c1, &c1), &pair(&c2, &c2));
        assert_eq!(
            j.contexts().cloned().collect::<Vec<_>>(),
            [c1.clone(), c2.clone()]
        );
        assert_eq!(j.img(&c1), &BTreeSet::from([c1]));
        assert_eq!(j.img(&c2), &BTreeSet::from([c2]));
    }

    #[test]
    fn join_unions_shared_key() {
        let k = s(0, &[]);
        let a = s(1, &[]);
        let b = s(2, &[]);
        let j = join(&pair(&k, &a), &pair(&k, &b));
        assert_eq!(j, map(&[(k, &[a, b])]));
    }

    #[test]
    fn leq_examples() {
        let k = s(0, &[]);
        let a = s(1, &[]);
        let b = s(2, &[]);
        let big = map(&[(k.clone(), &[a.clone(), b])]);
        let small = map(&[(k, &[a])]);
        assert!(leq(&small, &big));
        assert!(!leq(&big, &small));
        assert!(leq(&big, &big));
    }

    #[test]
    fn stack_state_validation() {
        assert_eq!(
            StackState::new(1, BTreeMap::from([(1, BTreeSet::from([3]))])),
            Err(DomainError::Position {
                position: 1,
                height: 1
            })
        );
        assert_eq!(
            StackState::new(2, BTreeMap::from([(0, BTreeSet::new())])),
            Err(DomainError::EmptyImage(0))
        );
        assert_eq!(
            StackState::new(1025, BTreeMap::new()),
            Err(DomainError::Height(1025))
        );
    }

    #[test]
    fn replica_order_puts_taller_stacks_first() {
        let mut v = vec![
            s(3, &[(1, &[0x142])]),
            s(7, &[(5, &[0x954])]),
            s(1, &[(0, &[0x0b])]),
            s(1, &[(0, &[0x05])]),
        ];
        v.sort();
        assert_eq!(
            v,
            [
                s(7, &[(5, &[0x954])]),
                s(3, &[(1, &[0x142])]),
                s(1, &[(0, &[0x05])]),
                s(1, &[(0, &[0x0b])])
            ]
        );
    }

    #[test]
    fn display() {
        assert_eq!(s(7, &[(5, &[0x954])]).to_string(), "<7,{s5->{0x954}}>");
    }

    #[test]
    fn top_absorbs() {
        let v: WithTop<AbstractState> = WithTop::Value(map(&[(s(0, &[]), &[s(0, &[])])]));
        assert_eq!(v.join(&WithTop::Top), WithTop::Top);
        assert!(v.leq(&WithTop::Top));
        assert!(!WithTop::Top.leq(&v));
        assert!(WithTop::<AbstractState>::bottom().leq(&v));
    }

    proptest! {
        #[test]
        fn join_assign_matches_join(a in abstract_state(), b in abstract_state()) {
            let mut x = a.clone();
            let changed = x.join_assign(&b);
            prop_assert_eq!(&x, &a.join(&b));
            prop_assert_eq!(changed, !b.leq(&a));
        }

        #[test]
        fn covered_by_is_reflexive(a in stack_state()) {
            prop_assert!(a.covered_by(&a));
        }
    }
}
