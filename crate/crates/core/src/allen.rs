//! Allen's interval algebra: relation classification, inversion and
//! conceptual-neighbourhood distance.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed time interval `[start, end]` in seconds with `start < end`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    start: f64,
    end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::InvalidInterval { start, end });
        }
        Ok(Self { start, end })
    }

    #[inline]
    pub fn start(&self) -> f64 {
        self.start
    }

    #[inline]
    pub fn end(&self) -> f64 {
        self.end
    }

    #[inline]
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    /// Always false: a valid interval has positive length.
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Intersection, if it has positive length.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start < end).then_some(Interval { start, end })
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.start, i.end]
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// The thirteen Allen relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllenRelation {
    Precedes,
    Meets,
    Overlaps,
    Starts,
    During,
    Finishes,
    Equals,
    PrecededBy,
    MetBy,
    OverlappedBy,
    StartedBy,
    Contains,
    FinishedBy,
}

impl AllenRelation {
    pub const ALL: [AllenRelation; 13] = [
        AllenRelation::Precedes,
        AllenRelation::Meets,
        AllenRelation::Overlaps,
        AllenRelation::Starts,
        AllenRelation::During,
        AllenRelation::Finishes,
        AllenRelation::Equals,
        AllenRelation::PrecededBy,
        AllenRelation::MetBy,
        AllenRelation::OverlappedBy,
        AllenRelation::StartedBy,
        AllenRelation::Contains,
        AllenRelation::FinishedBy,
    ];

    /// The seven relations QIG edges are labelled with.
    pub const BASE: [AllenRelation; 7] = [
        AllenRelation::Precedes,
        AllenRelation::Meets,
        AllenRelation::Overlaps,
        AllenRelation::Starts,
        AllenRelation::During,
        AllenRelation::Finishes,
        AllenRelation::Equals,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn is_base(self) -> bool {
        self.index() <= AllenRelation::Equals.index()
    }

    pub fn invert(self) -> AllenRelation {
        use AllenRelation::*;
        match self {
            Precedes => PrecededBy,
            Meets => MetBy,
            Overlaps => OverlappedBy,
            Starts => StartedBy,
            During => Contains,
            Finishes => FinishedBy,
            Equals => Equals,
            PrecededBy => Precedes,
            MetBy => Meets,
            OverlappedBy => Overlaps,
            StartedBy => Starts,
            Contains => During,
            FinishedBy => Finishes,
        }
    }

    /// Short code used in the neighbourhood diagram (`p`, `m`, `o`, ...).
    pub fn code(self) -> &'static str {
        use AllenRelation::*;
        match self {
            Precedes => "p",
            Meets => "m",
            Overlaps => "o",
            Starts => "s",
            During => "d",
            Finishes => "f",
            Equals => "eq",
            PrecededBy => "pi",
            MetBy => "mi",
            OverlappedBy => "oi",
            StartedBy => "si",
            Contains => "di",
            FinishedBy => "fi",
        }
    }

    pub fn name(self) -> &'static str {
        use AllenRelation::*;
        match self {
            Precedes => "precedes",
            Meets => "meets",
            Overlaps => "overlaps",
            Starts => "starts",
            During => "during",
            Finishes => "finishes",
            Equals => "equals",
            PrecededBy => "preceded_by",
            MetBy => "met_by",
            OverlappedBy => "overlapped_by",
            StartedBy => "started_by",
            Contains => "contains",
            FinishedBy => "finished_by",
        }
    }
}

impl fmt::Display for AllenRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AllenRelation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AllenRelation::ALL
            .iter()
            .copied()
            .find(|r| r.name() == s || r.code() == s)
            .ok_or_else(|| Error::Config(format!("unknown Allen relation `{s}`")))
    }
}

/// Allen relation holding from `a` to `b`, with exact endpoint comparison.
pub fn classify_relation(a: &Interval, b: &Interval) -> AllenRelation {
    classify_relation_with_tolerance(a, b, 0.0)
}

/// Allen relation holding from `a` to `b`; endpoints closer than `tolerance`
/// are treated as equal.
pub fn classify_relation_with_tolerance(a: &Interval, b: &Interval, tolerance: f64) -> AllenRelation {
    use std::cmp::Ordering::*;
    use AllenRelation::*;

    let cmp = |x: f64, y: f64| {
        if (x - y).abs() <= tolerance {
            Equal
        } else if x < y {
            Less
        } else {
            Greater
        }
    };

    match cmp(a.end, b.start) {
        Less => return Precedes,
        Equal => return Meets,
        Greater => {}
    }
    match cmp(b.end, a.start) {
        Less => return PrecededBy,
        Equal => return MetBy,
        Greater => {}
    }
    match (cmp(a.start, b.start), cmp(a.end, b.end)) {
        (Equal, Equal) => Equals,
        (Equal, Less) => Starts,
        (Equal, Greater) => StartedBy,
        (Greater, Equal) => Finishes,
        (Less, Equal) => FinishedBy,
        (Greater, Less) => During,
        (Less, Greater) => Contains,
        (Less, Less) => Overlaps,
        (Greater, Greater) => OverlappedBy,
    }
}

/// Solid edges of the conceptual neighbourhood graph.
pub const NEIGHBORHOOD_EDGES: [(AllenRelation, AllenRelation); 16] = {
    use AllenRelation::*;
    [
        (Precedes, Meets),
        (Meets, Overlaps),
        (Overlaps, Starts),
        (Overlaps, FinishedBy),
        (Starts, Equals),
        (Starts, During),
        (FinishedBy, Equals),
        (FinishedBy, Contains),
        (Equals, StartedBy),
        (Equals, Finishes),
        (During, Finishes),
        (Contains, StartedBy),
        (StartedBy, OverlappedBy),
        (Finishes, OverlappedBy),
        (OverlappedBy, MetBy),
        (MetBy, PrecededBy),
    ]
};

/// The conceptual neighbourhood graph with its all-pairs shortest-path matrix.
#[derive(Debug, Clone)]
pub struct NeighborhoodGraph {
    adjacency: [[bool; 13]; 13],
    distances: [[u8; 13]; 13],
}

impl NeighborhoodGraph {
    fn build() -> Self {
        let mut adjacency = [[false; 13]; 13];
        for (a, b) in NEIGHBORHOOD_EDGES {
            adjacency[a.index()][b.index()] = true;
            adjacency[b.index()][a.index()] = true;
        }
        let mut distances = [[u8::MAX; 13]; 13];
        for source in 0..13 {
            let row = &mut distances[source];
            row[source] = 0;
            let mut queue = VecDeque::from([source]);
            while let Some(u) = queue.pop_front() {
                for v in 0..13 {
                    if adjacency[u][v] && row[v] == u8::MAX {
                        row[v] = row[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
        }
        Self {
            adjacency,
            distances,
        }
    }

    /// Shared instance; distances are computed once.
    pub fn get() -> &'static NeighborhoodGraph {
        static GRAPH: OnceLock<NeighborhoodGraph> = OnceLock::new();
        GRAPH.get_or_init(NeighborhoodGraph::build)
    }

    pub fn are_neighbors(&self, a: AllenRelation, b: AllenRelation) -> bool {
        self.adjacency[a.index()][b.index()]
    }

    pub fn neighbors(&self, r: AllenRelation) -> impl Iterator<Item = AllenRelation> + '_ {
        AllenRelation::ALL
            .into_iter()
            .filter(move |&o| self.are_neighbors(r, o))
    }

    #[inline]
    pub fn distance(&self, a: AllenRelation, b: AllenRelation) -> u32 {
        self.distances[a.index()][b.index()] as u32
    }

    pub fn distance_matrix(&self) -> [[u8; 13]; 13] {
        self.distances
    }
}

/// Conceptual-neighbourhood distance between two relations.
#[inline]
pub fn neighborhood_distance(a: AllenRelation, b: AllenRelation) -> u32 {
    NeighborhoodGraph::get().distance(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use AllenRelation::*;

    fn iv(a: f64, b: f64) -> Interval {
        Interval::new(a, b).unwrap()
    }

    #[test]
    fn rejects_degenerate_intervals() {
        assert!(Interval::new(1.0, 1.0).is_err());
        assert!(Interval::new(2.0, 1.0).is_err());
        assert!(Interval::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn classifies_basic_cases() {
        assert_eq!(classify_relation(&iv(0.0, 2.0), &iv(3.0, 5.0)), Precedes);
        assert_eq!(classify_relation(&iv(0.0, 5.0), &iv(0.0, 5.0)), Equals);
        assert_eq!(classify_relation(&iv(1.0, 4.0), &iv(0.0, 10.0)), During);
        assert_eq!(classify_relation(&iv(0.0, 3.0), &iv(3.0, 5.0)), Meets);
        assert_eq!(classify_relation(&iv(0.0, 4.0), &iv(3.0, 5.0)), Overlaps);
        assert_eq!(classify_relation(&iv(0.0, 4.0), &iv(0.0, 5.0)), Starts);
        assert_eq!(classify_relation(&iv(1.0, 5.0), &iv(0.0, 5.0)), Finishes);
        assert_eq!(classify_relation(&iv(0.0, 10.0), &iv(1.0, 4.0)), Contains);
    }

    #[test]
    fn tolerance_merges_close_endpoints() {
        let a = iv(0.0, 2.0);
        let b = iv(2.0005, 4.0);
        assert_eq!(classify_relation(&a, &b), Precedes);
        assert_eq!(classify_relation_with_tolerance(&a, &b, 1e-3), Meets);
    }

    #[test]
    fn inversion_pairs() {
        assert_eq!(Precedes.invert(), PrecededBy);
        assert_eq!(Equals.invert(), Equals);
        assert_eq!(During.invert(), Contains);
        for r in AllenRelation::ALL {
            assert_eq!(r.invert().invert(), r);
            assert_ne!(r.is_base(), r.invert().is_base() && r != Equals);
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(neighborhood_distance(Precedes, Precedes), 0);
        assert_eq!(neighborhood_distance(Precedes, Meets), 1);
        assert_eq!(neighborhood_distance(During, Overlaps), 2);
        assert_eq!(neighborhood_distance(Precedes, PrecededBy), 8);
    }

    #[test]
    fn distance_one_means_neighbour() {
        let g = NeighborhoodGraph::get();
        for a in AllenRelation::ALL {
            for b in AllenRelation::ALL {
                assert_eq!(g.distance(a, b) == 1, g.are_neighbors(a, b), "{a} {b}");
            }
        }
    }

    #[test]
    fn parses_names_and_codes() {
        assert_eq!("during".parse::<AllenRelation>().unwrap(), During);
        assert_eq!("fi".parse::<AllenRelation>().unwrap(), FinishedBy);
        assert!("sideways".parse::<AllenRelation>().is_err());
    }
}
