//! Regression and latent-space evaluation: coefficient of determination,
//! Davies-Bouldin index over rating bins, centroid distance matrices, 2-D
//! projections, and the end-to-end checkpoint evaluation bundle.

pub mod tsne;

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::contour::{center_chunk, chunk_at, PitchContour};
use crate::data::{Criterion, Dataset};
use crate::error::{Error, Result};
use crate::loss::{assign_bin, euclidean_distance, RatingBins};
use crate::model::Model;

pub use tsne::project_2d;

/// Latent vectors of an evaluated set with their ratings and bin labels.
/// Labels are derived from the ratings at construction, so they are always
/// consistent with [`assign_bin`].
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub latents: Array2<f64>,
    pub bin_labels: Vec<usize>,
    pub ratings: Vec<f64>,
    pub recording_ids: Vec<String>,
}

impl EmbeddingSet {
    pub fn new(
        latents: Array2<f64>,
        ratings: Vec<f64>,
        recording_ids: Vec<String>,
        bins: &RatingBins,
    ) -> Result<Self> {
        let n = latents.nrows();
        if n == 0 {
            return Err(Error::Validation("embedding set is empty".into()));
        }
        if ratings.len() != n || recording_ids.len() != n {
            return Err(Error::Validation(format!(
                "embedding set length mismatch: {n} latents, {} ratings, {} ids",
                ratings.len(),
                recording_ids.len()
            )));
        }
        let bin_labels = ratings
            .iter()
            .map(|&r| assign_bin(r, bins))
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingSet {
            latents,
            bin_labels,
            ratings,
            recording_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.latents.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Coefficient of determination: 1 - SS_res / SS_tot. May be negative; the
/// total variance must be nonzero.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Validation(format!(
            "r_squared length mismatch: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.len() < 2 {
        return Err(Error::Validation(
            "r_squared needs at least 2 observations".into(),
        ));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (t, p) in y_true.iter().zip(y_pred) {
        ss_res += (t - p) * (t - p);
        ss_tot += (t - mean) * (t - mean);
    }
    if ss_tot == 0.0 {
        return Err(Error::Eval(
            "r_squared undefined: ground-truth ratings are constant".into(),
        ));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Per-bin centroids and mean member-to-centroid distances.
#[derive(Debug, Clone)]
pub struct ClusterStats {
    pub occupied_bins: Vec<usize>,
    /// One row per occupied bin.
    pub centroids: Array2<f64>,
    pub scatters: Vec<f64>,
}

pub fn cluster_stats(emb: &EmbeddingSet) -> Result<ClusterStats> {
    let dim = emb.latents.ncols();
    let mut occupied: Vec<usize> = emb.bin_labels.clone();
    occupied.sort_unstable();
    occupied.dedup();
    if occupied.len() < 2 {
        return Err(Error::Eval(format!(
            "cluster statistics need at least 2 occupied bins, got {}",
            occupied.len()
        )));
    }
    let mut centroids = Array2::zeros((occupied.len(), dim));
    let mut counts = vec![0usize; occupied.len()];
    for (row, &label) in emb.bin_labels.iter().enumerate() {
        let k = occupied.binary_search(&label).expect("occupied bin");
        counts[k] += 1;
        for j in 0..dim {
            centroids[[k, j]] += emb.latents[[row, j]];
        }
    }
    for k in 0..occupied.len() {
        for j in 0..dim {
            centroids[[k, j]] /= counts[k] as f64;
        }
    }
    let mut scatters = vec![0.0; occupied.len()];
    for (row, &label) in emb.bin_labels.iter().enumerate() {
        let k = occupied.binary_search(&label).expect("occupied bin");
        scatters[k] += euclidean_distance(emb.latents.row(row), centroids.row(k))?;
    }
    for k in 0..occupied.len() {
        scatters[k] /= counts[k] as f64;
    }
    Ok(ClusterStats {
        occupied_bins: occupied,
        centroids,
        scatters,
    })
}

/// Davies-Bouldin index over the occupied rating bins: the mean, across
/// bins, of the worst ratio of summed scatters to centroid distance.
/// Lower is better; singleton clusters have zero scatter.
pub fn davies_bouldin(emb: &EmbeddingSet) -> Result<f64> {
    let stats = cluster_stats(emb)?;
    let k = stats.occupied_bins.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in 0..k {
            if i == j {
                continue;
            }
            let dist = euclidean_distance(stats.centroids.row(i), stats.centroids.row(j))?;
            if dist == 0.0 {
                return Err(Error::Eval(format!(
                    "bins {} and {} have coincident centroids; similarity ratio undefined",
                    stats.occupied_bins[i], stats.occupied_bins[j]
                )));
            }
            worst = worst.max((stats.scatters[i] + stats.scatters[j]) / dist);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Symmetric matrix of Euclidean distances between occupied-bin centroids.
pub fn centroid_distance_matrix(emb: &EmbeddingSet) -> Result<(Vec<usize>, Array2<f64>)> {
    let stats = cluster_stats(emb)?;
    let k = stats.occupied_bins.len();
    let mut matrix = Array2::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let d = euclidean_distance(stats.centroids.row(i), stats.centroids.row(j))?;
            matrix[[i, j]] = d;
            matrix[[j, i]] = d;
        }
    }
    Ok((stats.occupied_bins, matrix))
}

/// Test-time chunk selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkPolicy {
    /// One deterministic center chunk per recording.
    Center,
    /// Mean prediction and mean latent over k evenly spaced chunks.
    Mean { chunks: usize },
}

impl ChunkPolicy {
    fn starts(&self, contour_len: usize, chunk_len: usize) -> Vec<usize> {
        match *self {
            ChunkPolicy::Center => vec![contour_len.saturating_sub(chunk_len) / 2],
            ChunkPolicy::Mean { chunks } => {
                let k = chunks.max(1);
                let max_start = contour_len.saturating_sub(chunk_len);
                if max_start == 0 || k == 1 {
                    return vec![contour_len.saturating_sub(chunk_len) / 2];
                }
                (0..k)
                    .map(|j| (j as f64 * max_start as f64 / (k - 1) as f64).round() as usize)
                    .collect()
            }
        }
    }
}

/// Everything the evaluation of one checkpoint produces.
#[derive(Debug, Clone)]
pub struct MetricsBundle {
    pub r_squared: f64,
    pub davies_bouldin: f64,
    pub occupied_bins: Vec<usize>,
    pub centroid_distances: Array2<f64>,
    pub embedding: EmbeddingSet,
    pub predictions: Vec<f64>,
}

fn contour_latent_and_pred(
    model: &Model,
    contour: &PitchContour,
    chunk_len: usize,
    policy: ChunkPolicy,
) -> Result<(Vec<f64>, f64)> {
    let starts = policy.starts(contour.len(), chunk_len);
    let mut input = Array3::zeros((starts.len(), 1, chunk_len));
    for (row, &start) in starts.iter().enumerate() {
        let chunk = if contour.len() <= chunk_len {
            center_chunk(contour, chunk_len)?
        } else {
            chunk_at(contour, chunk_len, start)?
        };
        for (t, &v) in chunk.values.iter().enumerate() {
            input[[row, 0, t]] = v;
        }
    }
    let (latents, preds) = model.forward_batch_eval(&input)?;
    let k = starts.len() as f64;
    let latent = (0..model.latent_dim())
        .map(|j| latents.column(j).sum() / k)
        .collect();
    let pred = preds.iter().sum::<f64>() / k;
    Ok((latent, pred))
}

/// Evaluate a model over the given recordings: R^2 of the predicted ratings,
/// Davies-Bouldin index and centroid distances of the latent space, plus the
/// raw embedding set for export. Deterministic given the model and policy.
pub fn evaluate_model(
    model: &Model,
    dataset: &Dataset,
    ids: &[String],
    criterion: Criterion,
    policy: ChunkPolicy,
    bins: &RatingBins,
    chunk_len: usize,
) -> Result<MetricsBundle> {
    if ids.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    let mut latents = Array2::zeros((ids.len(), model.latent_dim()));
    let mut predictions = Vec::with_capacity(ids.len());
    let mut ratings = Vec::with_capacity(ids.len());
    for (row, id) in ids.iter().enumerate() {
        let (contour, record) = dataset
            .get(id)
            .ok_or_else(|| Error::Validation(format!("recording '{id}' not in dataset")))?;
        let (latent, pred) = contour_latent_and_pred(model, contour, chunk_len, policy)?;
        for (j, v) in latent.into_iter().enumerate() {
            latents[[row, j]] = v;
        }
        predictions.push(pred);
        ratings.push(record.rating(criterion));
    }
    let r2 = r_squared(&ratings, &predictions)?;
    let embedding = EmbeddingSet::new(latents, ratings, ids.to_vec(), bins)?;
    let db = davies_bouldin(&embedding)?;
    let (occupied_bins, centroid_distances) = centroid_distance_matrix(&embedding)?;
    Ok(MetricsBundle {
        r_squared: r2,
        davies_bouldin: db,
        occupied_bins,
        centroid_distances,
        embedding,
        predictions,
    })
}

/// Write an embedding set as a TSV table: recording_id, bin, rating, then
/// latent coordinates.
pub fn write_embedding_table(emb: &EmbeddingSet, path: &Path) -> Result<()> {
    let dim = emb.latents.ncols();
    let mut out = String::from("recording_id\tbin\trating");
    for j in 0..dim {
        out.push_str(&format!("\tz{j}"));
    }
    out.push('\n');
    for i in 0..emb.len() {
        out.push_str(&format!(
            "{}\t{}\t{}",
            emb.recording_ids[i], emb.bin_labels[i], emb.ratings[i]
        ));
        for j in 0..dim {
            out.push_str(&format!("\t{}", emb.latents[[i, j]]));
        }
        out.push('\n');
    }
    crate::report::write_atomic(path, out.as_bytes())
}

/// Rows of an exported embedding table: ids, bin labels, ratings, latents.
pub type EmbeddingTable = (Vec<String>, Vec<usize>, Vec<f64>, Array2<f64>);

/// Read back a TSV embedding table.
pub fn read_embedding_table(path: &Path) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty embedding table", path.display())))?;
    let dim = header.split('\t').count().saturating_sub(3);
    if dim == 0 {
        return Err(Error::Parse(format!(
            "{}: embedding table has no latent columns",
            path.display()
        )));
    }
    let mut ids = Vec::new();
    let mut bins = Vec::new();
    let mut ratings = Vec::new();
    let mut flat = Vec::new();
    for (no, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != dim + 3 {
            return Err(Error::Parse(format!(
                "{}:{}: expected {} fields, got {}",
                path.display(),
                no + 2,
                dim + 3,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Parse(format!("{}:{}: bad {what}", path.display(), no + 2));
        ids.push(fields[0].to_string());
        bins.push(fields[1].parse().map_err(|_| bad("bin"))?);
        ratings.push(fields[2].parse().map_err(|_| bad("rating"))?);
        for f in &fields[3..] {
            flat.push(f.parse().map_err(|_| bad("latent value"))?);
        }
    }
    let n = ids.len();
    let latents = Array2::from_shape_vec((n, dim), flat)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok((ids, bins, ratings, latents))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng;

    use crate::rng::{stream_rng, Stream};

    fn emb(points: Array2<f64>, ratings: Vec<f64>) -> EmbeddingSet {
        let ids = (0..points.nrows()).map(|i| format!("r{i}")).collect();
        EmbeddingSet::new(points, ratings, ids, &RatingBins::new(5).unwrap()).unwrap()
    }

    #[test]
    fn r_squared_reference_points() {
        let y = [0.1, 0.4, 0.9];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        let mean = y.iter().sum::<f64>() / 3.0;
        let r = r_squared(&y, &[mean, mean, mean]).unwrap();
        assert!(r.abs() < 1e-15);
        assert_eq!(r_squared(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), -3.0);
        assert!(r_squared(&[0.5, 0.5], &[0.2, 0.4]).is_err());
        assert!(r_squared(&[0.5], &[0.2]).is_err());
        assert!(r_squared(&[0.5, 0.2], &[0.2]).is_err());
    }

    #[test]
    fn r_squared_is_permutation_invariant() {
        let y = [0.1, 0.3, 0.8, 0.6];
        let p = [0.2, 0.25, 0.7, 0.65];
        let a = r_squared(&y, &p).unwrap();
        let perm = [2usize, 0, 3, 1];
        let y2: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let p2: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        assert!((a - r_squared(&y2, &p2).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn cluster_stats_hand_example() {
        let points = arr2(&[[0.0, 0.0], [2.0, 0.0], [10.0, 10.0]]);
        let e = emb(points, vec![0.1, 0.15, 0.9]);
        let stats = cluster_stats(&e).unwrap();
        assert_eq!(stats.occupied_bins, vec![0, 4]);
        assert_eq!(stats.centroids[[0, 0]], 1.0);
        assert_eq!(stats.centroids[[0, 1]], 0.0);
        assert_eq!(stats.scatters[0], 1.0);
        assert_eq!(stats.scatters[1], 0.0);
    }

    #[test]
    fn cluster_stats_is_order_invariant() {
        let points = arr2(&[[0.0, 0.0], [2.0, 0.0], [10.0, 10.0], [12.0, 10.0]]);
        let e1 = emb(points.clone(), vec![0.1, 0.15, 0.9, 0.95]);
        let reordered = arr2(&[[12.0, 10.0], [0.0, 0.0], [10.0, 10.0], [2.0, 0.0]]);
        let e2 = emb(reordered, vec![0.95, 0.1, 0.9, 0.15]);
        let s1 = cluster_stats(&e1).unwrap();
        let s2 = cluster_stats(&e2).unwrap();
        assert_eq!(s1.occupied_bins, s2.occupied_bins);
        assert_eq!(s1.scatters, s2.scatters);
        assert_eq!(s1.centroids, s2.centroids);
    }

    #[test]
    fn davies_bouldin_reference_values() {
        // Two singleton clusters at distance 5: zero scatters, index 0.
        let e = emb(arr2(&[[0.0, 0.0], [5.0, 0.0]]), vec![0.1, 0.9]);
        assert_eq!(davies_bouldin(&e).unwrap(), 0.0);

        // Hand-evaluated pair: scatters 1 and 1, centroid distance 10.
        let e = emb(
            arr2(&[[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0]]),
            vec![0.1, 0.1, 0.9, 0.9],
        );
        let db = davies_bouldin(&e).unwrap();
        assert!((db - 0.2).abs() < 1e-12, "{db}");

        // Scale invariance.
        let scaled = emb(
            arr2(&[[0.0, 0.0], [0.0, 6.0], [30.0, 0.0], [30.0, 6.0]]),
            vec![0.1, 0.1, 0.9, 0.9],
        );
        assert!((davies_bouldin(&scaled).unwrap() - db).abs() < 1e-12);
    }

    #[test]
    fn davies_bouldin_rejects_degenerate_inputs() {
        let e = emb(arr2(&[[0.0, 0.0], [1.0, 0.0]]), vec![0.1, 0.15]);
        assert!(matches!(davies_bouldin(&e), Err(Error::Eval(_))));
        let coincident = emb(arr2(&[[1.0, 1.0], [1.0, 1.0]]), vec![0.1, 0.9]);
        assert!(matches!(davies_bouldin(&coincident), Err(Error::Eval(_))));
    }

    /// Brute-force Davies-Bouldin straight from the definition, sharing no
    /// code with the implementation.
    pub(crate) fn db_brute_force(points: &Array2<f64>, labels: &[usize]) -> f64 {
        let mut unique: Vec<usize> = labels.to_vec();
        unique.sort_unstable();
        unique.dedup();
        let dim = points.ncols();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let mut centroids: Vec<Vec<f64>> = Vec::new();
        let mut spreads: Vec<f64> = Vec::new();
        for &bin in &unique {
            let members: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == bin)
                .map(|(i, _)| i)
                .collect();
            let mut centroid = vec![0.0; dim];
            for &m in &members {
                for j in 0..dim {
                    centroid[j] += points[[m, j]];
                }
            }
            for c in centroid.iter_mut() {
                *c /= members.len() as f64;
            }
            let spread = members
                .iter()
                .map(|&m| dist(&points.row(m).to_vec(), &centroid))
                .sum::<f64>()
                / members.len() as f64;
            centroids.push(centroid);
            spreads.push(spread);
        }
        let k = unique.len();
        let mut acc = 0.0;
        for i in 0..k {
            let mut worst = f64::NEG_INFINITY;
            for j in 0..k {
                if i != j {
                    let r = (spreads[i] + spreads[j]) / dist(&centroids[i], &centroids[j]);
                    worst = worst.max(r);
                }
            }
            acc += worst;
        }
        acc / k as f64
    }

    #[test]
    fn davies_bouldin_matches_brute_force() {
        let mut rng = stream_rng(13, Stream::Data);
        for _ in 0..60 {
            let n = rng.random_range(6..40);
            let dim = rng.random_range(2..6);
            let points = Array2::from_shape_fn((n, dim), |_| rng.random::<f64>() * 6.0 - 3.0);
            let ratings: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let ids = (0..n).map(|i| format!("p{i}")).collect();
            let e = EmbeddingSet::new(points.clone(), ratings, ids, &RatingBins::new(5).unwrap())
                .unwrap();
            if e.bin_labels.iter().collect::<std::collections::BTreeSet<_>>().len() < 2 {
                continue;
            }
            let got = davies_bouldin(&e).unwrap();
            let want = db_brute_force(&points, &e.bin_labels);
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn davies_bouldin_improves_as_clusters_separate() {
        let base = arr2(&[
            [0.0, 0.0],
            [1.0, 0.5],
            [0.5, 1.0],
            [3.0, 3.0],
            [4.0, 3.5],
            [3.5, 4.0],
        ]);
        let ratings = vec![0.1, 0.1, 0.1, 0.9, 0.9, 0.9];
        let near = emb(base.clone(), ratings.clone());
        let mut far_points = base;
        for i in 3..6 {
            far_points[[i, 0]] += 20.0;
            far_points[[i, 1] ] += 10.0;
        }
        let far = emb(far_points, ratings);
        assert!(davies_bouldin(&far).unwrap() < davies_bouldin(&near).unwrap());
    }

    #[test]
    fn centroid_matrix_is_symmetric_zero_diagonal() {
        let e = emb(
            arr2(&[[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [5.0, 5.0]]),
            vec![0.1, 0.1, 0.9, 0.5],
        );
        let (bins, m) = centroid_distance_matrix(&e).unwrap();
        assert_eq!(bins, vec![0, 2, 4]);
        for i in 0..3 {
            assert_eq!(m[[i, i]], 0.0);
            for j in 0..3 {
                assert_eq!(m[[i, j]], m[[j, i]]);
            }
        }
        // Triangle inequality over all triples.
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    assert!(m[[i, j]] <= m[[i, k]] + m[[k, j]] + 1e-12);
                }
            }
        }
        // Two-cluster case reduces to the plain distance.
        let e2 = emb(arr2(&[[0.0, 0.0], [3.0, 4.0]]), vec![0.1, 0.9]);
        let (_, m2) = centroid_distance_matrix(&e2).unwrap();
        assert_eq!(m2[[0, 1]], 5.0);
    }

    /// Hand-built model that propagates a constant contour value straight
    /// through to the prediction: averaging conv kernels, identity batch
    /// norm, identity first linear layer, and a sigmoid linearized around
    /// 0.5 (weight 4, bias -2), so sigmoid(4v - 2) is approximately v on
    /// [0.3, 0.7].
    fn identity_ish_model() -> crate::model::Model {
        use crate::model::{EncoderConfig, Model};
        let cfg = EncoderConfig {
            conv_channels: vec![1],
            kernel_size: 5,
            stride: 1,
            input_len: 50,
        };
        let mut model = Model::new_seeded(cfg, 0).unwrap();
        let block = &mut model.blocks[0];
        block.conv.weight.fill(1.0 / 5.0);
        block.conv.bias.fill(0.0);
        block.bn.gamma.fill((1.0 + block.bn.eps).sqrt());
        block.bn.beta.fill(0.0);
        block.bn.running_mean.fill(0.0);
        block.bn.running_var.fill(1.0);
        model.head.fc1.weight.fill(1.0);
        model.head.fc1.bias.fill(0.0);
        model.head.fc2.weight.fill(4.0);
        model.head.fc2.bias.fill(-2.0);
        model
    }

    fn constant_dataset(ratings: &[f64]) -> (crate::data::Dataset, Vec<String>) {
        use crate::data::RatingRecord;
        use std::collections::BTreeMap;
        let mut entries = Vec::new();
        let mut ids = Vec::new();
        for (i, &r) in ratings.iter().enumerate() {
            let id = format!("const{i}");
            let contour =
                crate::contour::PitchContour::new(id.clone(), vec![r; 50]).unwrap();
            let mut map = BTreeMap::new();
            for c in crate::data::CRITERIA {
                map.insert(c, r);
            }
            entries.push((contour, RatingRecord::new(id.clone(), map).unwrap()));
            ids.push(id);
        }
        (crate::data::Dataset { entries }, ids)
    }

    #[test]
    fn evaluate_model_scores_a_perfect_model_near_one() {
        let ratings: Vec<f64> = (0..9).map(|i| 0.3 + 0.05 * i as f64).collect();
        let (dataset, ids) = constant_dataset(&ratings);
        let model = identity_ish_model();
        let bundle = evaluate_model(
            &model,
            &dataset,
            &ids,
            crate::data::Criterion::NoteAccuracy,
            ChunkPolicy::Center,
            &RatingBins::new(5).unwrap(),
            50,
        )
        .unwrap();
        assert!(bundle.r_squared > 0.97, "r_squared = {}", bundle.r_squared);
        // Deterministic: repeated invocation gives the identical bundle.
        let again = evaluate_model(
            &model,
            &dataset,
            &ids,
            crate::data::Criterion::NoteAccuracy,
            ChunkPolicy::Center,
            &RatingBins::new(5).unwrap(),
            50,
        )
        .unwrap();
        assert_eq!(bundle.r_squared, again.r_squared);
        assert_eq!(bundle.davies_bouldin, again.davies_bouldin);
        assert_eq!(bundle.predictions, again.predictions);
    }

    #[test]
    fn evaluate_model_scores_a_random_model_near_or_below_zero() {
        let ratings: Vec<f64> = (0..10).map(|i| 0.05 + 0.1 * i as f64).collect();
        let (dataset, ids) = constant_dataset(&ratings);
        let cfg = crate::model::EncoderConfig {
            conv_channels: vec![2, 3],
            kernel_size: 5,
            stride: 2,
            input_len: 50,
        };
        let model = crate::model::Model::new_seeded(cfg, 99).unwrap();
        let bundle = evaluate_model(
            &model,
            &dataset,
            &ids,
            crate::data::Criterion::NoteAccuracy,
            ChunkPolicy::Center,
            &RatingBins::new(5).unwrap(),
            50,
        )
        .unwrap();
        assert!(bundle.r_squared < 0.25, "r_squared = {}", bundle.r_squared);
    }

    #[test]
    fn mean_chunk_policy_spaces_starts_evenly() {
        let starts = ChunkPolicy::Mean { chunks: 3 }.starts(1400, 1000);
        assert_eq!(starts, vec![0, 200, 400]);
        let single = ChunkPolicy::Mean { chunks: 3 }.starts(800, 1000);
        assert_eq!(single, vec![0]);
        assert_eq!(ChunkPolicy::Center.starts(3000, 1000), vec![1000]);
    }

    #[test]
    fn embedding_table_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.tsv");
        let e = emb(
            arr2(&[[0.25, -1.5], [3.0, 0.125]]),
            vec![0.12345678901, 0.9],
        );
        write_embedding_table(&e, &path).unwrap();
        let (ids, bins, ratings, latents) = read_embedding_table(&path).unwrap();
        assert_eq!(ids, e.recording_ids);
        assert_eq!(bins, e.bin_labels);
        assert_eq!(ratings, e.ratings);
        assert_eq!(latents, e.latents);
    }
}
