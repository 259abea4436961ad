//! Columnar temporal-neighbor index with a C calling convention.
//!
//! The index stores, per node, the positions of its events sorted ascending
//! by (timestamp, event index). A query (node, time, k) answers with the up
//! to k most recent events strictly before the query time, most recent
//! first, matching the reference sampler bit for bit: padding slots carry
//! the node-count sentinel id, time 0.0 and edge index -1.
//!
//! All buffers are caller-allocated; the store is immutable after build and
//! safe to query from any number of threads concurrently.

use std::slice;

pub struct EventStore {
    sources: Vec<i32>,
    destinations: Vec<i32>,
    timestamps: Vec<f64>,
    /// CSR layout: adjacency[offsets[u]..offsets[u+1]] lists event positions
    /// of node u ascending by (timestamp, position).
    offsets: Vec<usize>,
    adjacency: Vec<u32>,
    node_count: usize,
}

impl EventStore {
    pub fn build(sources: &[i32], destinations: &[i32], timestamps: &[f64],
                 node_count: usize) -> Option<EventStore> {
        let n = sources.len();
        if destinations.len() != n || timestamps.len() != n {
            return None;
        }
        if timestamps.windows(2).any(|w| w[0] > w[1]) {
            return None; // events must arrive chronologically sorted
        }
        let mut degree = vec![0usize; node_count + 1];
        for i in 0..n {
            let (s, d) = (sources[i], destinations[i]);
            if s < 0 || d < 0 || s as usize >= node_count || d as usize >= node_count {
                return None;
            }
            degree[s as usize + 1] += 1;
            degree[d as usize + 1] += 1;
        }
        let mut offsets = degree;
        for u in 0..node_count {
            offsets[u + 1] += offsets[u];
        }
        let mut cursor = offsets.clone();
        let mut adjacency = vec![0u32; 2 * n];
        // events are scanned in position order, which is (timestamp, index)
        // order, so each per-node list comes out already sorted
        for i in 0..n {
            let s = sources[i] as usize;
            let d = destinations[i] as usize;
            adjacency[cursor[s]] = i as u32;
            cursor[s] += 1;
            adjacency[cursor[d]] = i as u32;
            cursor[d] += 1;
        }
        Some(EventStore {
            sources: sources.to_vec(),
            destinations: destinations.to_vec(),
            timestamps: timestamps.to_vec(),
            offsets,
            adjacency,
            node_count,
        })
    }

    pub fn event_count(&self) -> usize {
        self.sources.len()
    }

    /// Answer one query into caller slices of length k. Returns the number
    /// of valid slots.
    pub fn query_one(&self, node: i32, time: f64, out_ids: &mut [i32],
                     out_times: &mut [f64], out_edges: &mut [i32]) -> i32 {
        let k = out_ids.len();
        let sentinel = self.node_count as i32;
        for j in 0..k {
            out_ids[j] = sentinel;
            out_times[j] = 0.0;
            out_edges[j] = -1;
        }
        if node < 0 || node as usize >= self.node_count {
            return 0;
        }
        let u = node as usize;
        let list = &self.adjacency[self.offsets[u]..self.offsets[u + 1]];
        // binary search: first position with event time >= query time
        let mut lo = 0usize;
        let mut hi = list.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.timestamps[list[mid] as usize] < time {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let end = lo;
        let take = end.min(k);
        for j in 0..take {
            let pos = list[end - 1 - j] as usize; // most recent first
            let other = if self.sources[pos] == node {
                self.destinations[pos]
            } else {
                self.sources[pos]
            };
            out_ids[j] = other;
            out_times[j] = self.timestamps[pos];
            out_edges[j] = pos as i32;
        }
        take as i32
    }
}

/// Build an index over columnar event data. Returns null on invalid input
/// (length mismatch, unsorted timestamps, out-of-range node ids).
///
/// # Safety
/// `sources`, `destinations` and `timestamps` must point to `n_events`
/// readable elements each.
#[no_mangle]
pub unsafe extern "C" fn tsa_build_index(n_events: u64, n_nodes: u64,
                                         sources: *const i32,
                                         destinations: *const i32,
                                         timestamps: *const f64) -> *mut EventStore {
    if sources.is_null() || destinations.is_null() || timestamps.is_null() {
        return std::ptr::null_mut();
    }
    let n = n_events as usize;
    let src = slice::from_raw_parts(sources, n);
    let dst = slice::from_raw_parts(destinations, n);
    let ts = slice::from_raw_parts(timestamps, n);
    match EventStore::build(src, dst, ts, n_nodes as usize) {
        Some(store) => Box::into_raw(Box::new(store)),
        None => std::ptr::null_mut(),
    }
}

/// Answer a batch of queries into caller-allocated row-major buffers of
/// shape (n_queries, k) plus a per-query valid-count vector. Returns 0 on
/// success, non-zero on bad arguments.
///
/// # Safety
/// Input pointers must cover `n_queries` elements; output pointers must
/// cover `n_queries * k` (ids, times, edges) and `n_queries` (valid).
#[no_mangle]
pub unsafe extern "C" fn tsa_query(store: *const EventStore, n_queries: u64,
                                   nodes: *const i32, times: *const f64, k: u32,
                                   out_ids: *mut i32, out_times: *mut f64,
                                   out_edges: *mut i32, out_valid: *mut i32) -> i32 {
    if store.is_null() || nodes.is_null() || times.is_null() || k == 0
        || out_ids.is_null() || out_times.is_null() || out_edges.is_null()
        || out_valid.is_null() {
        return 1;
    }
    let store = &*store;
    let n = n_queries as usize;
    let k = k as usize;
    let nodes = slice::from_raw_parts(nodes, n);
    let times = slice::from_raw_parts(times, n);
    let ids = slice::from_raw_parts_mut(out_ids, n * k);
    let ts = slice::from_raw_parts_mut(out_times, n * k);
    let edges = slice::from_raw_parts_mut(out_edges, n * k);
    let valid = slice::from_raw_parts_mut(out_valid, n);
    for i in 0..n {
        valid[i] = store.query_one(nodes[i], times[i],
                                   &mut ids[i * k..(i + 1) * k],
                                   &mut ts[i * k..(i + 1) * k],
                                   &mut edges[i * k..(i + 1) * k]);
    }
    0
}

/// Release a store produced by `tsa_build_index`.
///
/// # Safety
/// `store` must be a pointer previously returned by `tsa_build_index` and
/// not freed since; passing null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn tsa_free(store: *mut EventStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}
