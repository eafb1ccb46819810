//! Graph channel: message passing over the follow graph and distillation of
//! the trained networks into graph-free students.

mod gnn;
mod train;

pub use gnn::{GnnConfig, GnnLayer, GnnModel, GnnVariant, ATTN_SLOPE};
pub use train::{
    distill_student, gnn_loss_and_grad, predict_student, train_gnn, DistillConfig, GnnTrainConfig, Student,
};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ingest::{EdgeList, UserStore};

pub const RELATIONS: usize = 2;
pub const FOLLOWS: usize = 0;
pub const FOLLOWED_BY: usize = 1;

/// Incoming neighbour lists of one relation in compressed form.
#[derive(Debug, Clone, PartialEq)]
pub struct Incoming {
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl Incoming {
    fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for &(_, dst) in pairs {
            offsets[dst + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut sources = vec![0usize; pairs.len()];
        for &(src, dst) in pairs {
            sources[fill[dst]] = src;
            fill[dst] += 1;
        }
        Incoming { offsets, sources }
    }

    /// Sources of messages arriving at node `i`.
    pub fn of(&self, i: usize) -> &[usize] {
        &self.sources[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Position of node `i`'s first incoming edge in edge order.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn n_edges(&self) -> usize {
        self.sources.len()
    }
}

/// Follow graph over a user store with both edge directions materialised.
///
/// A `follows` edge `u -> v` carries messages from `u` to `v`; its
/// `followed_by` twin `v -> u` carries them back.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub node_ids: Vec<String>,
    pub features: Array2<f64>,
    pub adjacency: [Vec<(usize, usize)>; RELATIONS],
    incoming: [Incoming; RELATIONS],
}

impl HeteroGraph {
    /// `adjacency[FOLLOWS]` holds (source, target) index pairs; the reverse
    /// relation is derived.
    pub fn from_parts(node_ids: Vec<String>, features: Array2<f64>, follows: Vec<(usize, usize)>) -> Result<Self> {
        let n = node_ids.len();
        if features.nrows() != n {
            return Err(Error::dim(n, features.nrows()));
        }
        if let Some(&(s, t)) = follows.iter().find(|&&(s, t)| s >= n || t >= n) {
            return Err(Error::InvariantViolation(format!("edge ({s}, {t}) out of range for {n} nodes")));
        }
        let followed_by: Vec<(usize, usize)> = follows.iter().map(|&(s, t)| (t, s)).collect();
        let incoming = [Incoming::from_pairs(n, &follows), Incoming::from_pairs(n, &followed_by)];
        Ok(HeteroGraph {
            node_ids,
            features,
            adjacency: [follows, followed_by],
            incoming,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn incoming(&self, relation: usize) -> &Incoming {
        &self.incoming[relation]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node_ids.binary_search_by(|n| n.as_str().cmp(id)).ok()
    }
}

/// Nodes are the store's users in ascending id order; row `i` of `features`
/// belongs to the `i`-th of them.
pub fn build_graph(store: &UserStore, edges: &EdgeList, features: Array2<f64>) -> Result<HeteroGraph> {
    let node_ids: Vec<String> = store.ids().map(str::to_string).collect();
    let index = |id: &str| {
        node_ids
            .binary_search_by(|n| n.as_str().cmp(id))
            .map_err(|_| Error::UnknownUser(id.to_string()))
    };
    let follows = edges
        .edges()
        .iter()
        .map(|e| Ok((index(&e.source_id)?, index(&e.target_id)?)))
        .collect::<Result<Vec<_>>>()?;
    HeteroGraph::from_parts(node_ids, features, follows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::UserRecord;
    use chrono::{TimeZone, Utc};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(ids: &[&str]) -> UserStore {
        let t = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        UserStore::from_records("s", ids.iter().map(|id| UserRecord::new(*id, t, t))).unwrap()
    }

    #[test]
    fn followed_by_is_transpose() {
        let s = store(&["u2", "u1"]);
        let e = EdgeList::follows([("u1".into(), "u2".into())]).unwrap();
        let g = build_graph(&s, &e, Array2::zeros((2, 3))).unwrap();
        assert_eq!(g.node_ids, vec!["u1", "u2"]);
        assert_eq!(g.adjacency[FOLLOWS], vec![(0, 1)]);
        assert_eq!(g.adjacency[FOLLOWED_BY], vec![(1, 0)]);
        assert_eq!(g.incoming(FOLLOWS).of(1), &[0]);
        assert_eq!(g.incoming(FOLLOWED_BY).of(0), &[1]);
    }

    #[test]
    fn no_edges_and_dangling_endpoints() {
        let s = store(&["a", "b"]);
        let g = build_graph(&s, &EdgeList::default(), Array2::zeros((2, 1))).unwrap();
        assert!(g.adjacency.iter().all(Vec::is_empty));
        let e = EdgeList::follows([("a".into(), "zz".into())]).unwrap();
        assert!(matches!(build_graph(&s, &e, Array2::zeros((2, 1))), Err(Error::UnknownUser(id)) if id == "zz"));
        assert!(matches!(build_graph(&s, &EdgeList::default(), Array2::zeros((3, 1))), Err(Error::Dimension { .. })));
    }

    #[test]
    fn random_graph_degree_sums_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ids: Vec<String> = (0..50).map(|i| format!("n{i:02}")).collect();
        let s = store(&ids.iter().map(String::as_str).collect::<Vec<_>>());
        let pairs: Vec<(String, String)> = (0..200)
            .filter_map(|_| {
                let (a, b) = (rng.random_range(0..50), rng.random_range(0..50));
                (a != b).then(|| (ids[a].clone(), ids[b].clone()))
            })
            .collect();
        let e = EdgeList::follows(pairs).unwrap();
        let g = build_graph(&s, &e, Array2::zeros((50, 1))).unwrap();
        let in_deg = |r: usize| (0..50).map(|i| g.incoming(r).of(i).len()).sum::<usize>();
        let mut out_follows = vec![0usize; 50];
        let mut in_followed = vec![0usize; 50];
        for &(s, _) in &g.adjacency[FOLLOWS] {
            out_follows[s] += 1;
        }
        for &(_, t) in &g.adjacency[FOLLOWED_BY] {
            in_followed[t] += 1;
        }
        assert_eq!(in_deg(FOLLOWS), e.len());
        assert_eq!(in_deg(FOLLOWED_BY), e.len());
        assert_eq!(out_follows, in_followed);
    }
}
