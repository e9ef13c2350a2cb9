//! Ratings-file ingestion with leave-last-out evaluation splits.
//!
//! Accepts the two common layouts: `user::item::rating::timestamp` and
//! headered CSV `userId,movieId,rating,timestamp`. Records are ordered by
//! timestamp (ties keep file order), each kept user's final interaction
//! becomes a held-out test case when its rating clears the threshold, and
//! user/item ids are densified by first appearance in time order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Catalog, LoggedInteraction, OfflineDataset};
use crate::error::{Error, Result};
use crate::metrics::TestCase;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Minimum training interactions a user must retain after the holdout
    /// is removed; users below this are dropped entirely.
    pub min_history: usize,
    /// A held-out interaction becomes a test case only when its rating
    /// reaches this value; otherwise the holdout is discarded.
    pub rating_threshold: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            min_history: 1,
            rating_threshold: 4.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows_read: usize,
    pub users_kept: usize,
    pub users_dropped: usize,
    pub items: usize,
    pub train_interactions: usize,
    pub test_cases: usize,
    /// Holdouts discarded for missing the rating threshold.
    pub holdouts_filtered: usize,
}

#[derive(Debug, Clone)]
pub struct IngestResult {
    /// Training interactions with per-user histories attached.
    pub dataset: OfflineDataset,
    pub test_cases: Vec<TestCase>,
    pub stats: IngestStats,
}

#[derive(Debug, Clone, Copy)]
struct RawRecord {
    user: u64,
    item: u64,
    rating: f64,
    timestamp: i64,
}

fn parse_line(line_no: usize, line: &str) -> Result<RawRecord> {
    let fields: Vec<&str> = if line.contains("::") {
        line.split("::").collect()
    } else {
        line.split(',').collect()
    };
    if fields.len() != 4 {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("expected 4 fields, found {}", fields.len()),
        });
    }
    let field = |i: usize| fields[i].trim();
    let user = field(0).parse::<u64>().map_err(|e| Error::Parse {
        line: line_no,
        msg: format!("bad user id {:?}: {e}", field(0)),
    })?;
    let item = field(1).parse::<u64>().map_err(|e| Error::Parse {
        line: line_no,
        msg: format!("bad item id {:?}: {e}", field(1)),
    })?;
    let rating = field(2).parse::<f64>().map_err(|e| Error::Parse {
        line: line_no,
        msg: format!("bad rating {:?}: {e}", field(2)),
    })?;
    if !rating.is_finite() {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("non-finite rating {rating}"),
        });
    }
    let timestamp = field(3).parse::<i64>().map_err(|e| Error::Parse {
        line: line_no,
        msg: format!("bad timestamp {:?}: {e}", field(3)),
    })?;
    Ok(RawRecord {
        user,
        item,
        rating,
        timestamp,
    })
}

/// Ingests from any line source; see [`ingest_movielens`].
pub fn ingest_movielens_reader<R: BufRead>(reader: R, cfg: &IngestConfig) -> Result<IngestResult> {
    let mut records = Vec::new();
    let mut rows_read = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        // A non-numeric leading field on the first row is a CSV header.
        if line_no == 1 && !trimmed.contains("::") {
            let first = trimmed.split(',').next().unwrap_or("");
            if first.trim().parse::<u64>().is_err() {
                continue;
            }
        }
        records.push(parse_line(line_no, trimmed)?);
        rows_read += 1;
    }
    if records.is_empty() {
        return Err(Error::parameter("ratings file contains no data rows"));
    }

    // Stable sort: equal timestamps keep file order, so "last" is well
    // defined even under timestamp ties.
    records.sort_by_key(|r| r.timestamp);

    let mut user_order: Vec<u64> = Vec::new();
    let mut per_user: HashMap<u64, Vec<RawRecord>> = HashMap::new();
    for r in &records {
        per_user.entry(r.user).or_insert_with(|| {
            user_order.push(r.user);
            Vec::new()
        });
        per_user.get_mut(&r.user).expect("just inserted").push(*r);
    }

    let mut users_dropped = 0usize;
    let mut kept: Vec<(u64, Vec<RawRecord>)> = Vec::new();
    for &u in &user_order {
        let recs = per_user.remove(&u).expect("grouped above");
        if recs.len() < cfg.min_history + 1 {
            users_dropped += 1;
        } else {
            kept.push((u, recs));
        }
    }
    if kept.is_empty() {
        return Err(Error::parameter(format!(
            "no user has at least {} interactions plus a holdout",
            cfg.min_history
        )));
    }

    let mut item_ids: HashMap<u64, usize> = HashMap::new();
    let intern = |raw: u64, table: &mut HashMap<u64, usize>| -> usize {
        let next = table.len();
        *table.entry(raw).or_insert(next)
    };

    // Train items get ids first (in chronological order per user, users in
    // first-appearance order), then holdout-only items.
    let mut holdouts: Vec<(usize, RawRecord)> = Vec::new();
    let mut train: Vec<(usize, RawRecord)> = Vec::new();
    let mut histories: Vec<Vec<usize>> = Vec::with_capacity(kept.len());
    for (dense_user, (_, recs)) in kept.iter().enumerate() {
        let (last, rest) = recs.split_last().expect("at least two records");
        let mut history = Vec::with_capacity(rest.len());
        for r in rest {
            let item = intern(r.item, &mut item_ids);
            history.push(item);
            train.push((dense_user, *r));
        }
        histories.push(history);
        holdouts.push((dense_user, *last));
    }

    let mut test_cases = Vec::new();
    let mut holdouts_filtered = 0usize;
    for (dense_user, r) in &holdouts {
        if r.rating >= cfg.rating_threshold {
            let item = intern(r.item, &mut item_ids);
            test_cases.push(TestCase {
                context: *dense_user,
                target: item,
                target_rating: r.rating,
            });
        } else {
            holdouts_filtered += 1;
        }
    }

    let catalog = Catalog::new(kept.len(), item_ids.len())?;
    // Interactions in global time order, as they were logged.
    let mut flat: Vec<(i64, usize, usize, f64)> = train
        .iter()
        .map(|(u, r)| (r.timestamp, *u, item_ids[&r.item], r.rating))
        .collect();
    flat.sort_by_key(|x| x.0);
    let interactions: Vec<LoggedInteraction> = flat
        .into_iter()
        .map(|(_, context, action, rating)| LoggedInteraction {
            context,
            action,
            observed_reward: rating,
        })
        .collect();

    let stats = IngestStats {
        rows_read,
        users_kept: kept.len(),
        users_dropped,
        items: catalog.n_actions,
        train_interactions: interactions.len(),
        test_cases: test_cases.len(),
        holdouts_filtered,
    };
    let mut dataset = OfflineDataset::from_interactions(catalog, interactions)?;
    dataset.histories = Some(histories);
    Ok(IngestResult {
        dataset,
        test_cases,
        stats,
    })
}

/// Ingests a ratings file, auto-detecting the `::` and CSV layouts.
pub fn ingest_movielens(path: &Path, cfg: &IngestConfig) -> Result<IngestResult> {
    let file = std::fs::File::open(path)?;
    ingest_movielens_reader(BufReader::new(file), cfg)
}
