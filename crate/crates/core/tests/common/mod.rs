#![allow(dead_code)]
//! Independent reference implementations shared by the integration suites.

use std::collections::HashMap;

use pcl_core::dataset::BoundingBox;
use pcl_core::embedding::EmbeddingVector;
use pcl_core::matching::{classification_loss, hungarian_match, ScoreParams};
use pcl_core::rng::seeded;
use pcl_core::train::Detection;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn unit(v: &[f64]) -> EmbeddingVector {
    EmbeddingVector::normalize(v.to_vec()).unwrap()
}

fn loss_only(z: &[Vec<f64>], t: &[EmbeddingVector], y: &[Vec<bool>], p: &ScoreParams) -> f64 {
    classification_loss(z, t, y, p).unwrap().0
}

/// Central differences against the analytic gradient.
pub fn gradient_check_cases(cases: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let p = ScoreParams::default();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let d = rng.random_range(2..=8);
        let mut gauss = |k: usize| -> Vec<f64> { (0..k).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let z: Vec<Vec<f64>> = (0..n).map(|_| unit(&gauss(d)).into_inner()).collect();
        let t: Vec<EmbeddingVector> = (0..m).map(|_| unit(&gauss(d))).collect();
        let y: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..m).map(|j| (i * 7 + j * 3) % 4 == 0).collect())
            .collect();
        let (_, grad) = classification_loss(&z, &t, &y, &p).unwrap();
        let h = 1e-6;
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for i in 0..n {
            for k in 0..d {
                let mut plus = z.clone();
                plus[i][k] += h;
                let mut minus = z.clone();
                minus[i][k] -= h;
                num.push((loss_only(&plus, &t, &y, &p) - loss_only(&minus, &t, &y, &p)) / (2.0 * h));
                ana.push(grad[i][k]);
            }
        }
        let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / scale);
    }
    worst
}

/// Exhaustive search: the optimum, then the first injective map in
/// lexicographic order whose cost is within tolerance of it.
pub fn brute_force(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    let g = cost[0].len();
    fn walk(cost: &[Vec<f64>], gt: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, f64)>) {
        let g = cost[0].len();
        if gt == g {
            let c = cur.iter().enumerate().map(|(j, &q)| cost[q][j]).sum();
            out.push((cur.clone(), c));
            return;
        }
        for q in 0..cost.len() {
            if !used[q] {
                used[q] = true;
                cur.push(q);
                walk(cost, gt + 1, used, cur, out);
                cur.pop();
                used[q] = false;
            }
        }
    }
    let mut all = Vec::new();
    walk(cost, 0, &mut vec![false; n], &mut Vec::with_capacity(g), &mut all);
    let best = all.iter().map(|(_, c)| *c).fold(f64::INFINITY, f64::min);
    let eps = 1e-9 * (1.0 + best.abs());
    all.into_iter().find(|(_, c)| *c <= best + eps).unwrap()
}

/// Seeded random cost matrices (G <= 7, every third one integral so that
/// ties occur) checked against exhaustive search.
pub fn hungarian_vs_exhaustive(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = seeded(seed);
    for case in 0..cases {
        let g = rng.random_range(1..=7);
        let n = rng.random_range(g..=8);
        let integral = case % 3 == 0;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..g)
                    .map(|_| {
                        if integral {
                            rng.random_range(0..4) as f64
                        } else {
                            rng.random_range(-5.0..5.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let r = hungarian_match(&cost).map_err(|e| format!("case {case}: {e}"))?;
        let (queries, best) = brute_force(&cost);
        let got: Vec<usize> = r.assignment.iter().map(|&(q, _)| q).collect();
        if r.total_cost != best || got != queries {
            return Err(format!("case {case}: got {got:?} ({}), expected {queries:?} ({best})", r.total_cost));
        }
    }
    Ok(())
}

/// Ground truth as (scene, class, box), plus the rare classes.
pub struct ApInstance {
    pub gts: Vec<(String, String, BoundingBox)>,
    pub rare: Vec<String>,
    pub classes: Vec<String>,
    pub detections: Vec<Detection>,
}

fn pairwise_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    let union = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter;
    inter / union
}

/// All-pairs reference evaluator: selection by repeated maximum, greedy
/// assignment to the best remaining ground truth, and the interpolated
/// precision taken directly as a maximum over ranks.
pub fn brute_force_ap(inst: &ApInstance, thresholds: &[f64]) -> (Vec<(String, f64)>, f64, f64) {
    let mut classes: Vec<&String> = inst.classes.iter().filter(|c| inst.gts.iter().any(|g| &g.1 == *c)).collect();
    classes.sort();
    let mut per_class = Vec::new();
    for class in classes {
        let idx: Vec<usize> = (0..inst.detections.len())
            .filter(|&i| &inst.detections[i].class_name == class)
            .collect();
        let mut order = Vec::new();
        let mut taken = vec![false; idx.len()];
        for _ in 0..idx.len() {
            let mut best: Option<usize> = None;
            for k in 0..idx.len() {
                if taken[k] {
                    continue;
                }
                if best.is_none_or(|b| inst.detections[idx[k]].score > inst.detections[idx[b]].score) {
                    best = Some(k);
                }
            }
            let b = best.unwrap();
            taken[b] = true;
            order.push(idx[b]);
        }
        let gt: Vec<&(String, String, BoundingBox)> = inst.gts.iter().filter(|g| &g.1 == class).collect();
        let mut total = 0.0;
        for &t in thresholds {
            let mut used = vec![false; gt.len()];
            let mut tp = 0usize;
            let mut pr = Vec::new();
            for (rank, &d) in order.iter().enumerate() {
                let det = &inst.detections[d];
                let mut best: Option<(usize, f64)> = None;
                for (j, g) in gt.iter().enumerate() {
                    if used[j] || g.0 != det.scene_id {
                        continue;
                    }
                    let iou = pairwise_iou(&det.bbox, &g.2);
                    if best.is_none_or(|(_, b)| iou > b) {
                        best = Some((j, iou));
                    }
                }
                if let Some((j, iou)) = best {
                    if iou >= t {
                        used[j] = true;
                        tp += 1;
                    }
                }
                pr.push((tp as f64 / (rank + 1) as f64, tp as f64 / gt.len() as f64));
            }
            let mut sum = 0.0;
            for r in 0..=100 {
                let level = r as f64 / 100.0;
                let p = pr
                    .iter()
                    .filter(|(_, rec)| *rec >= level)
                    .map(|(p, _)| *p)
                    .fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.max(p))));
                sum += p.unwrap_or(0.0);
            }
            total += sum / 101.0;
        }
        per_class.push((class.clone(), total / thresholds.len() as f64));
    }
    let mean = |v: Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let ap = mean(per_class.iter().map(|(_, v)| *v).collect());
    let ap_rare = mean(per_class.iter().filter(|(c, _)| inst.rare.contains(c)).map(|(_, v)| *v).collect());
    (per_class, ap, ap_rare)
}

/// Small random instance: at most 5 classes and 20 ground-truth boxes on a
/// coarse grid so that IoU and score ties occur.
pub fn random_ap_instance(seed: u64) -> ApInstance {
    let mut rng = seeded(seed);
    let n_classes = rng.random_range(1..=5);
    let classes: Vec<String> = (0..n_classes).map(|c| format!("c{c}")).collect();
    let rare: Vec<String> = classes.iter().filter(|_| rng.random_bool(0.4)).cloned().collect();
    let n_scenes = rng.random_range(1..=3);
    let grid_box = |rng: &mut pcl_core::rng::Rng| {
        let x0 = rng.random_range(0..8) as f64 * 5.0;
        let y0 = rng.random_range(0..8) as f64 * 5.0;
        let w = rng.random_range(1..=4) as f64 * 5.0;
        let h = rng.random_range(1..=4) as f64 * 5.0;
        BoundingBox::new(x0, y0, x0 + w, y0 + h).unwrap()
    };
    let n_gt = rng.random_range(0..=20);
    let gts: Vec<(String, String, BoundingBox)> = (0..n_gt)
        .map(|_| {
            let s = format!("s{}", rng.random_range(0..n_scenes));
            let c = classes[rng.random_range(0..n_classes)].clone();
            (s, c, grid_box(&mut rng))
        })
        .collect();
    let n_det = rng.random_range(0..=25);
    let detections = (0..n_det)
        .map(|_| {
            let (scene_id, class_name, bbox) = if !gts.is_empty() && rng.random_bool(0.6) {
                let g = &gts[rng.random_range(0..gts.len())];
                let mut b = g.2;
                b.x1 += rng.random_range(0..3) as f64 * 2.5;
                b.y1 += rng.random_range(0..3) as f64 * 2.5;
                (g.0.clone(), g.1.clone(), b)
            } else {
                (
                    format!("s{}", rng.random_range(0..n_scenes)),
                    classes[rng.random_range(0..n_classes)].clone(),
                    grid_box(&mut rng),
                )
            };
            Detection {
                scene_id,
                class_name,
                bbox,
                score: rng.random_range(0..10) as f64 / 10.0,
            }
        })
        .collect();
    ApInstance {
        gts,
        rare,
        classes,
        detections,
    }
}

/// The instance as a dataset with one scene per scene id (extent 100).
pub fn ap_dataset(inst: &ApInstance) -> pcl_core::dataset::DetectionDataset {
    use pcl_core::dataset::{ClassEntry, DetectionDataset, ObjectInstance, Rarity, Scene};
    let mut scenes: HashMap<String, Vec<ObjectInstance>> = HashMap::new();
    for (k, (s, c, b)) in inst.gts.iter().enumerate() {
        scenes.entry(s.clone()).or_default().push(ObjectInstance {
            id: format!("g{k}"),
            class_name: c.clone(),
            attributes: Vec::new(),
            relations: Vec::new(),
            bbox: *b,
        });
    }
    let mut scene_list: Vec<Scene> = scenes
        .into_iter()
        .map(|(id, objects)| Scene {
            id,
            width: 100.0,
            height: 100.0,
            objects,
        })
        .collect();
    scene_list.sort_by(|a, b| a.id.cmp(&b.id));
    let catalog = inst
        .classes
        .iter()
        .map(|c| ClassEntry {
            name: c.clone(),
            frequency: 0.5,
            rarity: if inst.rare.contains(c) { Rarity::Rare } else { Rarity::Frequent },
        })
        .collect();
    DetectionDataset::new(scene_list, catalog).unwrap()
}

/// Upper 1% point of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_critical(dof: f64) -> f64 {
    ChiSquared::new(dof).expect("positive dof").inverse_cdf(0.99)
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Default split, uniform draws over a 20-label set and the square-root
/// frequency sampler on the two-class catalog.
pub fn check_label_machinery() -> Result<(), String> {
    use pcl_core::dataset::{ClassEntry, Rarity};
    use pcl_core::embedding::sample_negative_classes;
    use pcl_core::labels::{assemble_label_set, default_templates_7, sample_target_label, LabelSet};
    use std::collections::HashSet;

    let pseudo: Vec<String> = (0..30).map(|i| format!("cat caption {i}")).collect();
    for seed in 0..50 {
        let set = assemble_label_set("o", &pseudo, "cat", &default_templates_7(), 20, 0.2, &mut seeded(seed))
            .map_err(|e| e.to_string())?;
        check(set.pseudo.len() == 16 && set.manual.len() == 4, || {
            format!("split {}+{}", set.pseudo.len(), set.manual.len())
        })?;
    }

    let set = LabelSet {
        object_id: "o".into(),
        pseudo: (0..16).map(|i| format!("p{i}")).collect(),
        manual: (0..4).map(|i| format!("m{i}")).collect(),
    };
    let mut rng = seeded(99);
    let mut counts: HashMap<String, usize> = HashMap::new();
    let draws = 100_000;
    let mut pseudo_draws = 0usize;
    for _ in 0..draws {
        let (label, is_pseudo) = sample_target_label(&set, &mut rng).map_err(|e| e.to_string())?;
        *counts.entry(label.to_string()).or_default() += 1;
        pseudo_draws += usize::from(is_pseudo);
    }
    check(counts.len() == 20, || format!("{} distinct labels drawn", counts.len()))?;
    let expected = draws as f64 / 20.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = chi2_critical(19.0);
    check(chi2 < critical, || format!("chi-square {chi2:.2} >= {critical:.3}"))?;
    let share = pseudo_draws as f64 / draws as f64;
    check((share - 0.8).abs() <= 0.01, || format!("pseudo share {share}"))?;

    let catalog = vec![
        ClassEntry {
            name: "A".into(),
            frequency: 0.81,
            rarity: Rarity::Frequent,
        },
        ClassEntry {
            name: "B".into(),
            frequency: 0.01,
            rarity: Rarity::Rare,
        },
    ];
    let mut rng = seeded(7);
    let none = HashSet::new();
    let mut a = 0usize;
    for _ in 0..draws {
        let pick = sample_negative_classes(&catalog, &none, 1, &mut rng).map_err(|e| e.to_string())?;
        a += usize::from(pick[0] == "A");
    }
    let ratio = a as f64 / draws as f64;
    check((ratio - 0.9).abs() <= 0.01, || format!("A share {ratio}"))
}

/// Ten unique insertions per step for `steps` steps into a 200/10 bank.
pub fn check_memory_bank(steps: usize) -> Result<(), String> {
    use pcl_core::embedding::MemoryBank;

    let mut bank = MemoryBank::new(200, 10);
    let mut rng = seeded(5);
    let mut history: Vec<String> = Vec::new();
    let mut model: std::collections::VecDeque<String> = std::collections::VecDeque::new();
    let mut next = 0usize;
    for step in 0..steps {
        // Some steps re-offer recently seen texts, which must be skipped.
        let mut batch = Vec::new();
        let mut texts: Vec<String> = Vec::new();
        while texts.len() < 10 {
            let text = if !history.is_empty() && rng.random_bool(0.2) {
                history[history.len() - 1 - rng.random_range(0..history.len().min(50))].clone()
            } else {
                next += 1;
                format!("label {next}")
            };
            if !texts.contains(&text) {
                texts.push(text);
            }
        }
        for t in &texts {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            batch.push((t.clone(), unit(&v)));
        }
        bank.update(&batch, step as u64);
        // Reference FIFO: skip texts already held, insert at most ten, then
        // evict the oldest overflow.
        let fresh: Vec<String> = texts.iter().filter(|t| !model.contains(t)).take(10).cloned().collect();
        model.extend(fresh);
        while model.len() > 200 {
            model.pop_front();
        }
        let got: Vec<&String> = bank.entries().map(|e| &e.text).collect();
        check(got.len() <= 200, || format!("step {step}: {} entries", got.len()))?;
        check(got.iter().copied().eq(model.iter()), || format!("step {step}: contents differ from the reference FIFO"))?;
        for t in texts {
            history.retain(|h| h != &t);
            history.push(t);
        }
        if history.len() > 100 {
            history.drain(..history.len() - 100);
        }
    }
    check(bank.len() == 200, || format!("saturated bank holds {}", bank.len()))?;
    Ok(())
}

/// Same as [`check_memory_bank`] but with fresh texts only, where the
/// survivors are known exactly.
pub fn check_memory_bank_recency(steps: usize) -> Result<(), String> {
    use pcl_core::embedding::MemoryBank;

    let mut bank = MemoryBank::new(200, 10);
    for step in 0..steps {
        let batch: Vec<(String, EmbeddingVector)> = (0..10)
            .map(|k| (format!("label {}", step * 10 + k), unit(&[1.0, (step * 10 + k) as f64])))
            .collect();
        bank.update(&batch, step as u64);
        check(bank.len() <= 200, || format!("step {step}: {} entries", bank.len()))?;
    }
    let got: Vec<String> = bank.entries().map(|e| e.text.clone()).collect();
    let total = steps * 10;
    let expected: Vec<String> = (total.saturating_sub(200)..total).map(|i| format!("label {i}")).collect();
    check(got == expected, || "bank contents are not the 200 most recent texts".into())
}

/// Crop fixtures and betweenness over all ordered pairs of a 12-class world.
pub fn check_geometry() -> Result<(), String> {
    use pcl_core::dataset::crop_with_margin;
    use pcl_core::embedding::{ConceptWorld, MixingWeights, TextEncoder};

    let b = |x0, y0, x1, y1| BoundingBox::new(x0, y0, x1, y1).unwrap();
    let fixtures = [
        (b(10.0, 10.0, 110.0, 110.0), 200.0, 0.2, b(0.0, 0.0, 120.0, 120.0)),
        (b(10.0, 10.0, 110.0, 110.0), 200.0, 0.0, b(10.0, 10.0, 110.0, 110.0)),
        (b(0.0, 0.0, 100.0, 100.0), 100.0, 0.2, b(0.0, 0.0, 100.0, 100.0)),
    ];
    for (input, size, margin, want) in fixtures {
        let got = crop_with_margin(&input, size, size, margin).map_err(|e| e.to_string())?;
        check(got == want, || format!("crop {input} margin {margin}: {got} != {want}"))?;
    }

    let names: Vec<String> = (0..12).map(|i| format!("thing{i}")).collect();
    for (dim, seed) in [(64, 1), (12, 2), (10, 3)] {
        let world = ConceptWorld::generate(&names, &[], dim, MixingWeights::default(), seed).map_err(|e| e.to_string())?;
        for u in &names {
            for v in &names {
                if u == v {
                    continue;
                }
                let eu = world.encode(u).map_err(|e| e.to_string())?;
                let ev = world.encode(v).map_err(|e| e.to_string())?;
                let base = eu.cosine(&ev);
                if base >= 1.0 {
                    continue;
                }
                let c = world.encode(&format!("{u} sitting on {v}")).map_err(|e| e.to_string())?;
                check(c.cosine(&ev) > base && c.cosine(&eu) > base, || {
                    format!("dim {dim}: \"{u} sitting on {v}\" is not between its concepts")
                })?;
            }
        }
    }
    Ok(())
}

/// Bit-exact store and dataset round trips, and typed errors for every
/// truncation and for a sweep of corrupted bytes.
pub fn check_formats() -> Result<(), String> {
    use pcl_core::dataset::synth::{build_dataset, generate_scenes, WorldSpec};
    use pcl_core::dataset::{load_dataset, save_dataset};
    use pcl_core::embedding::{read_store, write_store, StoredEmbedding};
    use pcl_core::Error;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = seeded(3);
    let records: Vec<StoredEmbedding> = (0..5)
        .map(|i| StoredEmbedding {
            text: format!("label {i} \u{00e9}"),
            values: (0..64)
                .map(|k| if k == 0 && i == 0 { f32::MIN_POSITIVE / 4.0 } else { rng.random_range(-1.0f32..1.0) })
                .collect(),
        })
        .collect();
    let path = dir.path().join("store.bin");
    write_store(&path, &records).map_err(|e| e.to_string())?;
    let back = read_store(&path).map_err(|e| e.to_string())?;
    let bits = |r: &[StoredEmbedding]| -> Vec<(String, Vec<u32>)> {
        r.iter().map(|s| (s.text.clone(), s.values.iter().map(|v| v.to_bits()).collect())).collect()
    };
    check(bits(&back) == bits(&records), || "store round trip changed bits".into())?;
    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let broken = dir.path().join("broken.bin");
    for cut in 0..bytes.len() {
        std::fs::write(&broken, &bytes[..cut]).map_err(|e| e.to_string())?;
        match read_store(&broken) {
            Err(Error::Format(_)) => {}
            other => return Err(format!("store truncated at {cut}: {other:?}")),
        }
    }
    let mut longer = bytes.clone();
    longer.push(0);
    std::fs::write(&broken, &longer).map_err(|e| e.to_string())?;
    check(matches!(read_store(&broken), Err(Error::Format(_))), || "trailing byte accepted".into())?;
    for i in 0..18 {
        let mut flipped = bytes.clone();
        flipped[i] ^= 0xff;
        std::fs::write(&broken, &flipped).map_err(|e| e.to_string())?;
        check(matches!(read_store(&broken), Err(Error::Format(_))), || format!("header byte {i} flip accepted"))?;
    }

    let spec = WorldSpec::default();
    let ds = build_dataset(&spec, generate_scenes(&spec, 25, 4, "f-").map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let ds_dir = dir.path().join("dataset");
    save_dataset(&ds, &ds_dir).map_err(|e| e.to_string())?;
    let loaded = load_dataset(&ds_dir).map_err(|e| e.to_string())?;
    check(loaded == ds, || "dataset round trip changed values".into())?;
    let again = dir.path().join("again");
    save_dataset(&loaded, &again).map_err(|e| e.to_string())?;
    for f in ["scenes.jsonl", "catalog.jsonl"] {
        let a = std::fs::read(ds_dir.join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(again.join(f)).map_err(|e| e.to_string())?;
        check(a == b, || format!("{f} is not byte-stable"))?;
    }
    let scenes = std::fs::read(ds_dir.join("scenes.jsonl")).map_err(|e| e.to_string())?;
    let step = (scenes.len() / 60).max(1);
    for cut in (1..scenes.len() - 1).step_by(step) {
        let mut corrupt = scenes.clone();
        corrupt.truncate(cut);
        corrupt.extend_from_slice(b"#}\n");
        std::fs::write(ds_dir.join("scenes.jsonl"), &corrupt).map_err(|e| e.to_string())?;
        match load_dataset(&ds_dir) {
            Err(Error::Parse { .. }) | Err(Error::Integrity(_)) | Err(Error::InvalidBox(_)) => {}
            other => return Err(format!("corrupt scenes at {cut}: {:?}", other.map(|d| d.scenes.len()))),
        }
    }
    Ok(())
}
