//! CSV tables written into run directories.

use d3m_core::debias::{AlignmentScores, SearchPoint, SubpopCell};
use d3m_core::discovery::PseudoGroups;
use d3m_core::eval::SweepResult;

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory csv writer")
}

fn row<I, S>(w: &mut csv::Writer<Vec<u8>>, fields: I)
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(fields).expect("in-memory csv writer");
}

/// `index,score,coeff_<group>...`, one line per training example.
pub fn scores_csv(a: &AlignmentScores, group_names: Option<&[String]>) -> Vec<u8> {
    let mut w = writer();
    let mut header = vec!["index".to_string(), "score".to_string()];
    header.extend((0..a.group_coeffs.len()).map(|g| match group_names.and_then(|n| n.get(g)) {
        Some(name) => format!("coeff_{name}"),
        None => format!("coeff_g{g}"),
    }));
    row(&mut w, &header);
    for (i, s) in a.scores.iter().enumerate() {
        let mut line = vec![i.to_string(), s.to_string()];
        line.extend(a.group_coeffs.iter().map(|c| c[i].to_string()));
        row(&mut w, &line);
    }
    finish(w)
}

/// Group losses and their soft-max weights.
pub fn weights_csv(a: &AlignmentScores, group_names: Option<&[String]>) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, ["group", "loss", "weight"]);
    for (g, (l, wt)) in a.group_losses.iter().zip(&a.weights).enumerate() {
        let name = group_names.and_then(|n| n.get(g)).cloned().unwrap_or_else(|| format!("g{g}"));
        row(&mut w, [name, l.to_string(), wt.to_string()]);
    }
    finish(w)
}

pub fn removed_csv(removed: &[usize]) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, ["train_index"]);
    for i in removed {
        row(&mut w, [i.to_string()]);
    }
    finish(w)
}

pub fn search_csv(points: &[SearchPoint], chosen_k: usize) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, ["k", "val_wga", "std_err", "val_overall", "overall_std_err", "chosen"]);
    for p in points {
        row(
            &mut w,
            [
                p.k.to_string(),
                p.val_wga.to_string(),
                p.std_err.to_string(),
                p.val_overall.to_string(),
                p.overall_std_err.to_string(),
                u8::from(p.k == chosen_k).to_string(),
            ],
        );
    }
    finish(w)
}

/// `method,k,wga,balanced,overall,seed`; the d3m point at the negative-score
/// count is listed last with method `d3m_heuristic`.
pub fn sweep_csv(s: &SweepResult) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, ["method", "k", "wga", "balanced", "overall", "seed"]);
    let tagged = s.points.iter().map(|p| (p.method.as_str(), p)).chain(s.heuristic.iter().map(|p| ("d3m_heuristic", p)));
    for (name, p) in tagged {
        row(
            &mut w,
            [
                name.to_string(),
                p.k.to_string(),
                p.wga.to_string(),
                p.balanced.to_string(),
                p.overall.to_string(),
                p.seed.to_string(),
            ],
        );
    }
    finish(w)
}

pub fn subpop_csv(cells: &[SubpopCell]) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, ["label", "annotation", "value", "count", "mean", "std_err"]);
    for c in cells {
        row(
            &mut w,
            [
                c.label.to_string(),
                c.annotation_name.clone(),
                u8::from(c.value).to_string(),
                c.count.to_string(),
                c.mean.to_string(),
                c.std_err.to_string(),
            ],
        );
    }
    finish(w)
}

/// `val_index,class,projection,pseudo_group`.
pub fn pseudo_groups_csv(p: &PseudoGroups, labels: &[usize]) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, ["val_index", "class", "projection", "pseudo_group"]);
    for (i, (&g, &proj)) in p.groups.iter().zip(&p.projections).enumerate() {
        row(&mut w, [i.to_string(), labels[i].to_string(), proj.to_string(), g.to_string()]);
    }
    finish(w)
}

/// Per-class directions in long form: `class,train_index,component`, with
/// each class's threshold on a `threshold` line first.
pub fn directions_csv(p: &PseudoGroups) -> Vec<u8> {
    let mut w = writer();
    row(&mut w, ["class", "train_index", "component"]);
    for (c, (dir, t)) in p.directions.iter().zip(&p.thresholds).enumerate() {
        row(&mut w, [c.to_string(), "threshold".to_string(), t.to_string()]);
        for (j, v) in dir.iter().enumerate() {
            row(&mut w, [c.to_string(), j.to_string(), v.to_string()]);
        }
    }
    finish(w)
}
