//! The semantic map: keyframes, map points with fused class distributions,
//! and their partition into per-object clusters.
//!
//! Points sharing a winning class and persistent instance id form a cluster;
//! "stuff" classes without instances (floor, road) form one structure cluster
//! per class. Clusters of the same class are merged when their centroids are
//! close and most descriptors match, which repairs tracks broken by object
//! reappearance.

use crate::geometry::{project, CameraIntrinsics, GeometryError, Pixel, Pose};
use crate::plane_fit::PlaneFitResult;
use crate::semantics::{observe_point, ClassDistribution, InstanceMap, ProbabilityMap, SemanticsError};
use nalgebra::Vector3;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Centroid distance threshold for cluster merging, in meters.
pub const DEFAULT_TAU_MERGE: f64 = 0.15;
/// Descriptor Hamming radius below which two descriptors "match".
pub const DESCRIPTOR_MATCH_RADIUS: u32 = 50;
/// Fraction of matching descriptors required for a merge.
pub const MERGE_MATCH_FRACTION: f64 = 0.8;
/// Number of recent instance-id observations kept per point for the majority vote.
pub const INSTANCE_VOTE_WINDOW: usize = 5;
/// Consecutive agreeing reprojection votes needed to reassign a point's id.
pub const REPAIR_VOTES: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("empty cluster {0}")]
    EmptyCluster(u32),
    #[error("unknown point {0}")]
    UnknownPoint(u32),
    #[error("unknown keyframe {0}")]
    UnknownKeyframe(u32),
    #[error("unknown cluster {0}")]
    UnknownCluster(u32),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// 256-bit binary feature descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Descriptor(pub [u8; 32]);

impl Descriptor {
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// Semantic class metadata.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClassInfo {
    pub name: String,
    /// A-priori planar class: clusters of this class get plane fits.
    pub planar: bool,
    /// "Stuff" class without instances; forms one structure cluster per class.
    pub stuff: bool,
}

/// Class id -> metadata table.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClassTable {
    pub classes: Vec<ClassInfo>,
}

impl ClassTable {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, class: usize) -> Option<&ClassInfo> {
        self.classes.get(class)
    }

    pub fn is_planar(&self, class: usize) -> bool {
        self.get(class).map(|c| c.planar).unwrap_or(false)
    }

    pub fn is_stuff(&self, class: usize) -> bool {
        self.get(class).map(|c| c.stuff).unwrap_or(false)
    }
}

/// One 2D observation of a map point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub keyframe: u32,
    pub pixel: Pixel,
    pub weight: f64,
}

/// Sparse 3D map point with fused semantics.
#[derive(Debug, Clone)]
pub struct MapPoint {
    pub id: u32,
    pub position: Vector3<f64>,
    pub dist: ClassDistribution,
    /// Winning class, kept equal to `dist.argmax()` after every fusion update.
    pub class: usize,
    /// Persistent instance id; 0 for stuff/unassigned.
    pub instance: u32,
    pub descriptor: Descriptor,
    pub observations: Vec<Observation>,
    /// Last few persistent instance ids observed for this point.
    recent_instance_ids: Vec<u32>,
    /// Reprojection-repair vote state: (candidate foreign id, consecutive count).
    repair_vote: Option<(u32, u32)>,
}

impl MapPoint {
    pub fn new(id: u32, position: Vector3<f64>, num_classes: usize, descriptor: Descriptor) -> Self {
        Self {
            id,
            position,
            dist: ClassDistribution::uniform(num_classes),
            class: 0,
            instance: 0,
            descriptor,
            observations: Vec::new(),
            recent_instance_ids: Vec::new(),
            repair_vote: None,
        }
    }

    /// Majority vote over the recent instance-id observations; ties break to
    /// the smaller id.
    fn voted_instance(&self) -> u32 {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &id in &self.recent_instance_ids {
            *counts.entry(id).or_insert(0) += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(id, _)| id)
            .unwrap_or(0)
    }
}

/// A set of map points sharing class and instance, optionally with a fitted plane.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub id: u32,
    pub class: usize,
    /// Instance key; 0 for structure (stuff) clusters.
    pub instance: u32,
    pub members: BTreeSet<u32>,
    pub plane: Option<PlaneFitResult>,
    /// Members excluded from the planar constraint by far-point pruning.
    pub pruned: BTreeSet<u32>,
    /// Member count at the last plane-fit attempt (fit retry bookkeeping).
    pub members_at_last_fit: usize,
}

impl Cluster {
    fn new(id: u32, class: usize, instance: u32) -> Self {
        Self {
            id,
            class,
            instance,
            members: BTreeSet::new(),
            plane: None,
            pruned: BTreeSet::new(),
            members_at_last_fit: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Keyframe {
    pub pose: Pose,
    pub timestamp: f64,
}

/// The semantic map. Single-writer: fusion, clustering, merging and BA
/// write-back are serialized by the caller.
#[derive(Debug, Clone)]
pub struct SemanticMap {
    pub keyframes: BTreeMap<u32, Keyframe>,
    pub points: BTreeMap<u32, MapPoint>,
    pub clusters: BTreeMap<u32, Cluster>,
    pub classes: ClassTable,
    /// (class, instance) -> cluster id. Structure clusters use instance 0.
    cluster_index: BTreeMap<(usize, u32), u32>,
    point_cluster: BTreeMap<u32, u32>,
    next_cluster_id: u32,
}

impl SemanticMap {
    pub fn new(classes: ClassTable) -> Self {
        Self {
            keyframes: BTreeMap::new(),
            points: BTreeMap::new(),
            clusters: BTreeMap::new(),
            classes,
            cluster_index: BTreeMap::new(),
            point_cluster: BTreeMap::new(),
            next_cluster_id: 1,
        }
    }

    pub fn insert_keyframe(&mut self, id: u32, pose: Pose, timestamp: f64) {
        self.keyframes.insert(id, Keyframe { pose, timestamp });
    }

    pub fn insert_point(&mut self, point: MapPoint) {
        self.points.insert(point.id, point);
    }

    pub fn cluster_of(&self, point_id: u32) -> Option<u32> {
        self.point_cluster.get(&point_id).copied()
    }

    /// Fuse one segmentation observation into a point: class distribution via
    /// the Bayesian update, winning class recomputed, instance id updated by
    /// majority vote over the last [`INSTANCE_VOTE_WINDOW`] id observations.
    /// The instance map must already carry persistent (tracked) ids.
    pub fn upsert_point_semantics(
        &mut self,
        point_id: u32,
        pmap: &ProbabilityMap,
        imap: &InstanceMap,
        px: &Pixel,
    ) -> Result<(), ClusterError> {
        let instance_id = imap.id_at(px)?;
        let point = self
            .points
            .get_mut(&point_id)
            .ok_or(ClusterError::UnknownPoint(point_id))?;
        let (dist, _degenerate) = observe_point(&point.dist, pmap, px)?;
        point.dist = dist;
        point.class = point.dist.argmax();
        point.recent_instance_ids.push(instance_id);
        if point.recent_instance_ids.len() > INSTANCE_VOTE_WINDOW {
            point.recent_instance_ids.remove(0);
        }
        point.instance = point.voted_instance();
        Ok(())
    }

    /// Place a point into the cluster keyed by its class and instance,
    /// creating the cluster if needed. Things cluster by (class, instance),
    /// stuff classes by class alone. Points with no instance and a non-stuff
    /// class stay unclustered.
    pub fn assign_to_cluster(&mut self, point_id: u32) -> Result<Option<u32>, ClusterError> {
        let point = self
            .points
            .get(&point_id)
            .ok_or(ClusterError::UnknownPoint(point_id))?;
        let stuff = self.classes.is_stuff(point.class);
        let key = if stuff {
            (point.class, 0)
        } else if point.instance != 0 {
            (point.class, point.instance)
        } else {
            self.remove_from_cluster(point_id);
            return Ok(None);
        };

        if let Some(&existing) = self.point_cluster.get(&point_id) {
            let c = &self.clusters[&existing];
            if (c.class, c.instance) == key {
                return Ok(Some(existing));
            }
            self.remove_from_cluster(point_id);
        }

        let cluster_id = match self.cluster_index.get(&key) {
            Some(&id) => id,
            None => {
                let id = self.next_cluster_id;
                self.next_cluster_id += 1;
                self.clusters.insert(id, Cluster::new(id, key.0, key.1));
                self.cluster_index.insert(key, id);
                id
            }
        };
        self.clusters
            .get_mut(&cluster_id)
            .unwrap()
            .members
            .insert(point_id);
        self.point_cluster.insert(point_id, cluster_id);
        Ok(Some(cluster_id))
    }

    fn remove_from_cluster(&mut self, point_id: u32) {
        if let Some(cid) = self.point_cluster.remove(&point_id) {
            if let Some(c) = self.clusters.get_mut(&cid) {
                c.members.remove(&point_id);
                c.pruned.remove(&point_id);
                if c.members.is_empty() {
                    self.cluster_index.remove(&(c.class, c.instance));
                    self.clusters.remove(&cid);
                }
            }
        }
    }

    pub fn centroid(&self, cluster_id: u32) -> Result<Vector3<f64>, ClusterError> {
        let cluster = self
            .clusters
            .get(&cluster_id)
            .ok_or(ClusterError::UnknownCluster(cluster_id))?;
        if cluster.members.is_empty() {
            return Err(ClusterError::EmptyCluster(cluster_id));
        }
        let mut sum = Vector3::zeros();
        for &pid in &cluster.members {
            sum += self.points[&pid].position;
        }
        Ok(sum / cluster.members.len() as f64)
    }

    /// Fraction of points in the smaller cluster whose nearest descriptor in
    /// the other cluster lies within the Hamming match radius.
    pub fn descriptor_match_fraction(&self, a: u32, b: u32) -> Result<f64, ClusterError> {
        let ca = self.clusters.get(&a).ok_or(ClusterError::UnknownCluster(a))?;
        let cb = self.clusters.get(&b).ok_or(ClusterError::UnknownCluster(b))?;
        if ca.members.is_empty() {
            return Err(ClusterError::EmptyCluster(a));
        }
        if cb.members.is_empty() {
            return Err(ClusterError::EmptyCluster(b));
        }
        let (small, large) = if ca.members.len() <= cb.members.len() {
            (ca, cb)
        } else {
            (cb, ca)
        };
        let large_desc: Vec<Descriptor> = large
            .members
            .iter()
            .map(|pid| self.points[pid].descriptor)
            .collect();
        let mut matched = 0usize;
        for pid in &small.members {
            let d = self.points[pid].descriptor;
            let best = large_desc.iter().map(|o| d.hamming(o)).min().unwrap();
            if best <= DESCRIPTOR_MATCH_RADIUS {
                matched += 1;
            }
        }
        Ok(matched as f64 / small.members.len() as f64)
    }

    /// Merge two same-class clusters when their centroids are within
    /// `tau_merge` and more than 80% of descriptors match. The surviving
    /// cluster keeps the older (smaller) id; member points' instance ids are
    /// rewritten. Returns whether a merge happened.
    pub fn try_merge_clusters(&mut self, a: u32, b: u32, tau_merge: f64) -> Result<bool, ClusterError> {
        if a == b {
            return Ok(false);
        }
        let (ca, cb) = match (self.clusters.get(&a), self.clusters.get(&b)) {
            (Some(ca), Some(cb)) => (ca, cb),
            _ => return Ok(false),
        };
        if ca.class != cb.class || ca.instance == 0 || cb.instance == 0 {
            return Ok(false);
        }
        let dist = (self.centroid(a)? - self.centroid(b)?).norm();
        if dist >= tau_merge {
            return Ok(false);
        }
        if self.descriptor_match_fraction(a, b)? <= MERGE_MATCH_FRACTION {
            return Ok(false);
        }

        let (keep, drop) = if a < b { (a, b) } else { (b, a) };
        let dropped = self.clusters.remove(&drop).unwrap();
        self.cluster_index.remove(&(dropped.class, dropped.instance));
        let keep_instance = self.clusters[&keep].instance;
        for pid in dropped.members {
            let p = self.points.get_mut(&pid).unwrap();
            p.instance = keep_instance;
            p.recent_instance_ids.clear();
            p.recent_instance_ids.push(keep_instance);
            self.clusters.get_mut(&keep).unwrap().members.insert(pid);
            self.point_cluster.insert(pid, keep);
        }
        for pid in dropped.pruned {
            self.clusters.get_mut(&keep).unwrap().pruned.insert(pid);
        }
        Ok(true)
    }

    /// One merge pass: try every same-class cluster pair once.
    pub fn merge_pass(&mut self, tau_merge: f64) -> usize {
        let ids: Vec<u32> = self.clusters.keys().copied().collect();
        let mut merged = 0;
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                if let Ok(true) = self.try_merge_clusters(ids[i], ids[j], tau_merge) {
                    merged += 1;
                }
            }
        }
        merged
    }

    /// Reproject clustered points into a keyframe and vote on the persistent
    /// segment id each lands in. A point is reassigned after
    /// [`REPAIR_VOTES`] consecutive agreeing foreign votes. Returns the
    /// number of reassigned points.
    pub fn reproject_repair(
        &mut self,
        keyframe_id: u32,
        imap: &InstanceMap,
        k: &CameraIntrinsics,
    ) -> Result<usize, ClusterError> {
        let kf = self
            .keyframes
            .get(&keyframe_id)
            .copied()
            .ok_or(ClusterError::UnknownKeyframe(keyframe_id))?;
        let clustered: Vec<u32> = self.point_cluster.keys().copied().collect();
        let mut reassigned = 0usize;
        for pid in clustered {
            let point = self.points.get_mut(&pid).unwrap();
            if point.instance == 0 {
                continue;
            }
            let px = match project(&kf.pose, k, &point.position) {
                Ok(px) => px,
                Err(GeometryError::BehindCamera { .. }) => continue,
                Err(_) => continue,
            };
            let seg = match imap.id_at(&px) {
                Ok(id) => id,
                Err(_) => continue, // out of image, no vote
            };
            if seg == 0 || seg == point.instance {
                point.repair_vote = None;
                continue;
            }
            let votes = match point.repair_vote {
                Some((cand, n)) if cand == seg => n + 1,
                _ => 1,
            };
            if votes >= REPAIR_VOTES {
                point.repair_vote = None;
                point.instance = seg;
                point.recent_instance_ids.clear();
                point.recent_instance_ids.push(seg);
                self.assign_to_cluster(pid)?;
                reassigned += 1;
            } else {
                point.repair_vote = Some((seg, votes));
            }
        }
        Ok(reassigned)
    }

    /// Check the cluster partition: every point with an instance id belongs
    /// to exactly one cluster and member lists are consistent.
    pub fn check_partition(&self) -> bool {
        for (pid, cid) in &self.point_cluster {
            match self.clusters.get(cid) {
                Some(c) if c.members.contains(pid) => {}
                _ => return false,
            }
        }
        for (cid, c) in &self.clusters {
            for pid in &c.members {
                if self.point_cluster.get(pid) != Some(cid) {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::ProbabilityMap;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn table() -> ClassTable {
        ClassTable {
            classes: vec![
                ClassInfo { name: "background".into(), planar: false, stuff: true },
                ClassInfo { name: "floor".into(), planar: true, stuff: true },
                ClassInfo { name: "table".into(), planar: true, stuff: false },
                ClassInfo { name: "book".into(), planar: true, stuff: false },
            ],
        }
    }

    fn rand_desc(rng: &mut StdRng) -> Descriptor {
        let mut d = [0u8; 32];
        rng.fill(&mut d);
        Descriptor(d)
    }

    fn point(id: u32, pos: [f64; 3], class: usize, instance: u32, desc: Descriptor) -> MapPoint {
        let mut p = MapPoint::new(id, Vector3::new(pos[0], pos[1], pos[2]), 4, desc);
        p.class = class;
        p.instance = instance;
        p
    }

    #[test]
    fn assign_same_key_shares_cluster() {
        let mut map = SemanticMap::new(table());
        let d = Descriptor([0; 32]);
        map.insert_point(point(1, [0.0; 3], 2, 5, d));
        map.insert_point(point(2, [0.1, 0.0, 0.0], 2, 5, d));
        map.insert_point(point(3, [0.2, 0.0, 0.0], 2, 6, d));
        let c1 = map.assign_to_cluster(1).unwrap().unwrap();
        let c2 = map.assign_to_cluster(2).unwrap().unwrap();
        let c3 = map.assign_to_cluster(3).unwrap().unwrap();
        assert_eq!(c1, c2);
        assert_ne!(c1, c3);
    }

    #[test]
    fn stuff_points_share_structure_cluster() {
        let mut map = SemanticMap::new(table());
        let d = Descriptor([0; 32]);
        map.insert_point(point(1, [0.0; 3], 1, 0, d));
        map.insert_point(point(2, [5.0, 0.0, 0.0], 1, 0, d));
        let c1 = map.assign_to_cluster(1).unwrap().unwrap();
        let c2 = map.assign_to_cluster(2).unwrap().unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn centroid_examples() {
        let mut map = SemanticMap::new(table());
        let d = Descriptor([0; 32]);
        map.insert_point(point(1, [0.0, 0.0, 0.0], 2, 1, d));
        map.insert_point(point(2, [2.0, 0.0, 0.0], 2, 1, d));
        let c = map.assign_to_cluster(1).unwrap().unwrap();
        map.assign_to_cluster(2).unwrap();
        assert_relative_eq!(map.centroid(c).unwrap(), Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn descriptor_match_fraction_regimes() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut map = SemanticMap::new(table());
        // Cluster A: 20 random descriptors; cluster B: identical copies.
        for i in 0..20 {
            let d = rand_desc(&mut rng);
            map.insert_point(point(i, [0.0; 3], 2, 1, d));
            map.insert_point(point(100 + i, [0.0; 3], 2, 2, d));
        }
        for i in 0..20 {
            map.assign_to_cluster(i).unwrap();
            map.assign_to_cluster(100 + i).unwrap();
        }
        let a = map.cluster_of(0).unwrap();
        let b = map.cluster_of(100).unwrap();
        assert_relative_eq!(map.descriptor_match_fraction(a, b).unwrap(), 1.0);

        // Cluster C: fresh random descriptors; expected Hamming ~128 >> 50.
        for i in 0..20 {
            map.insert_point(point(200 + i, [0.0; 3], 2, 3, rand_desc(&mut rng)));
            map.assign_to_cluster(200 + i).unwrap();
        }
        let c = map.cluster_of(200).unwrap();
        assert_relative_eq!(map.descriptor_match_fraction(a, c).unwrap(), 0.0);

        // Half copied, half random.
        for i in 0..20 {
            let d = if i < 10 {
                map.points[&i].descriptor
            } else {
                rand_desc(&mut rng)
            };
            map.insert_point(point(300 + i, [0.0; 3], 2, 4, d));
            map.assign_to_cluster(300 + i).unwrap();
        }
        let h = map.cluster_of(300).unwrap();
        assert_relative_eq!(map.descriptor_match_fraction(a, h).unwrap(), 0.5);
    }

    #[test]
    fn merge_rules() {
        let mut rng = StdRng::seed_from_u64(4);
        let mut map = SemanticMap::new(table());
        for i in 0..10 {
            let d = rand_desc(&mut rng);
            map.insert_point(point(i, [0.0, 0.0, i as f64 * 0.001], 3, 1, d));
            map.insert_point(point(100 + i, [0.01, 0.0, i as f64 * 0.001], 3, 2, d));
            map.insert_point(point(200 + i, [10.0, 0.0, i as f64 * 0.001], 3, 3, d));
            map.insert_point(point(300 + i, [0.0, 0.01, i as f64 * 0.001], 3, 4, rand_desc(&mut rng)));
        }
        for i in 0..10 {
            for base in [0, 100, 200, 300] {
                map.assign_to_cluster(base + i).unwrap();
            }
        }
        let a = map.cluster_of(0).unwrap();
        let b = map.cluster_of(100).unwrap();
        let far = map.cluster_of(200).unwrap();
        let randd = map.cluster_of(300).unwrap();

        // Far centroids: no merge.
        assert!(!map.try_merge_clusters(a, far, DEFAULT_TAU_MERGE).unwrap());
        // Close but random descriptors: no merge.
        assert!(!map.try_merge_clusters(a, randd, DEFAULT_TAU_MERGE).unwrap());
        // Close and identical descriptors: merge, older id survives.
        let before = map.clusters.len();
        assert!(map.try_merge_clusters(a, b, DEFAULT_TAU_MERGE).unwrap());
        assert_eq!(map.clusters.len(), before - 1);
        assert!(map.clusters.contains_key(&a.min(b)));
        assert_eq!(map.points[&100].instance, map.points[&0].instance);
        assert!(map.check_partition());
        // Idempotence: second call is a no-op.
        assert!(!map.try_merge_clusters(a, b, DEFAULT_TAU_MERGE).unwrap());
    }

    #[test]
    fn semantics_update_recomputes_class_and_instance() {
        let mut map = SemanticMap::new(table());
        map.insert_point(MapPoint::new(1, Vector3::zeros(), 4, Descriptor([0; 32])));
        // Single-pixel image, one-hot class 3 ("book"), instance 9.
        let pmap = ProbabilityMap::from_labels(&[3], 1, 1, 4, 0.9).unwrap();
        let imap = InstanceMap::new(1, 1, vec![9]).unwrap();
        map.upsert_point_semantics(1, &pmap, &imap, &Pixel::new(0.0, 0.0)).unwrap();
        assert_eq!(map.points[&1].class, 3);
        assert_eq!(map.points[&1].instance, 9);
    }

    #[test]
    fn majority_vote_over_conflicting_observations() {
        // Oracle: fold the product rule over the 5 observations directly.
        let mut map = SemanticMap::new(table());
        map.insert_point(MapPoint::new(1, Vector3::zeros(), 4, Descriptor([0; 32])));
        let table_map = ProbabilityMap::from_labels(&[2], 1, 1, 4, 0.9).unwrap();
        let book_map = ProbabilityMap::from_labels(&[3], 1, 1, 4, 0.9).unwrap();
        let imap_a = InstanceMap::new(1, 1, vec![5]).unwrap();
        let imap_b = InstanceMap::new(1, 1, vec![6]).unwrap();
        let px = Pixel::new(0.0, 0.0);
        for _ in 0..4 {
            map.upsert_point_semantics(1, &table_map, &imap_a, &px).unwrap();
        }
        map.upsert_point_semantics(1, &book_map, &imap_b, &px).unwrap();
        assert_eq!(map.points[&1].class, 2);
        assert_eq!(map.points[&1].instance, 5);
    }

    #[test]
    fn out_of_bounds_leaves_map_unchanged() {
        let mut map = SemanticMap::new(table());
        map.insert_point(MapPoint::new(1, Vector3::zeros(), 4, Descriptor([0; 32])));
        let pmap = ProbabilityMap::from_labels(&[2], 1, 1, 4, 0.9).unwrap();
        let imap = InstanceMap::new(1, 1, vec![5]).unwrap();
        let before = map.points[&1].clone();
        let err = map.upsert_point_semantics(1, &pmap, &imap, &Pixel::new(3.0, 0.0));
        assert!(err.is_err());
        assert_eq!(map.points[&1].dist, before.dist);
        assert_eq!(map.points[&1].instance, before.instance);
    }

    #[test]
    fn reproject_repair_votes_three_times() {
        let k = CameraIntrinsics::new(100.0, 100.0, 10.0, 10.0, 20, 20).unwrap();
        let mut map = SemanticMap::new(table());
        map.insert_keyframe(0, Pose::identity(), 0.0);
        // Point on the optical axis projects to (10, 10).
        let mut p = point(1, [0.0, 0.0, 2.0], 2, 5, Descriptor([0; 32]));
        p.recent_instance_ids = vec![5; 5];
        map.insert_point(p);
        map.assign_to_cluster(1).unwrap();

        // Segment at that pixel carries foreign persistent id 7.
        let imap = InstanceMap::new(20, 20, vec![7; 400]).unwrap();
        assert_eq!(map.reproject_repair(0, &imap, &k).unwrap(), 0);
        assert_eq!(map.reproject_repair(0, &imap, &k).unwrap(), 0);
        assert_eq!(map.reproject_repair(0, &imap, &k).unwrap(), 1);
        assert_eq!(map.points[&1].instance, 7);
        assert!(map.check_partition());

        // Once repaired, repeated passes change nothing.
        assert_eq!(map.reproject_repair(0, &imap, &k).unwrap(), 0);
    }

    #[test]
    fn repair_skips_points_behind_camera() {
        let k = CameraIntrinsics::new(100.0, 100.0, 10.0, 10.0, 20, 20).unwrap();
        let mut map = SemanticMap::new(table());
        map.insert_keyframe(0, Pose::identity(), 0.0);
        let mut p = point(1, [0.0, 0.0, -2.0], 2, 5, Descriptor([0; 32]));
        p.recent_instance_ids = vec![5; 5];
        map.insert_point(p);
        map.assign_to_cluster(1).unwrap();
        let imap = InstanceMap::new(20, 20, vec![7; 400]).unwrap();
        for _ in 0..5 {
            assert_eq!(map.reproject_repair(0, &imap, &k).unwrap(), 0);
        }
        assert_eq!(map.points[&1].instance, 5);
    }
}
