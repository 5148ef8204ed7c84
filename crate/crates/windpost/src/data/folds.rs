//! Three-fold cross-validation layout over extended-winter blocks, with an
//! enforced half-year gap between training and evaluation dates.

use super::FoldSpec;
use crate::error::{Error, Result};
use chrono::{Datelike, NaiveDate};
use std::collections::BTreeMap;

/// Minimum calendar gap between a training date and any validation/test date.
pub const MIN_GAP_DAYS: i64 = 180;

/// Partition model-selection dates into three winter blocks and build the
/// cross-validation folds: fold k validates on block k and trains on the
/// other two. October-December dates form the head half of a block; the
/// January-March tail of the following year completes it, and an orphan tail
/// (a spring preceding the first head) completes the final block.
///
/// `test_dates` may be empty; when present the gap to every fold's training
/// dates is verified as well.
pub fn make_folds(dates: &[NaiveDate], test_dates: &[NaiveDate]) -> Result<Vec<FoldSpec>> {
    let mut heads: BTreeMap<i32, Vec<NaiveDate>> = BTreeMap::new();
    let mut tails: BTreeMap<i32, Vec<NaiveDate>> = BTreeMap::new();
    for &d in dates {
        match d.month() {
            10..=12 => heads.entry(d.year()).or_default().push(d),
            1..=3 => tails.entry(d.year()).or_default().push(d),
            m => {
                return Err(Error::FoldGapViolation(format!(
                    "date {d} (month {m}) lies outside the extended-winter blocks"
                )))
            }
        }
    }
    if heads.len() != 3 {
        return Err(Error::FoldGapViolation(format!(
            "expected three October-December blocks, found {}",
            heads.len()
        )));
    }
    if tails.len() > 3 {
        return Err(Error::FoldGapViolation(format!(
            "found {} January-March segments for three blocks",
            tails.len()
        )));
    }

    let head_years: Vec<i32> = heads.keys().copied().collect();
    // Natural winters first: the tail of year y+1 belongs to the head of y.
    let mut assigned: BTreeMap<i32, i32> = BTreeMap::new();
    let mut orphan_tails: Vec<i32> = Vec::new();
    for &t in tails.keys() {
        if heads.contains_key(&(t - 1)) {
            assigned.insert(t - 1, t);
        } else {
            orphan_tails.push(t);
        }
    }
    // Orphan tails (e.g. a spring before the first reforecast winter) fill the
    // remaining blocks in ascending head order.
    for &h in &head_years {
        if let std::collections::btree_map::Entry::Vacant(slot) = assigned.entry(h) {
            if let Some(t) = orphan_tails.first().copied() {
                orphan_tails.remove(0);
                slot.insert(t);
            }
        }
    }
    if !orphan_tails.is_empty() {
        return Err(Error::FoldGapViolation(format!(
            "January-March segment of year {} cannot be paired with a block",
            orphan_tails[0]
        )));
    }

    let mut blocks: Vec<Vec<NaiveDate>> = Vec::with_capacity(3);
    for &h in &head_years {
        let mut block = heads[&h].clone();
        if let Some(t) = assigned.get(&h) {
            block.extend_from_slice(&tails[t]);
        }
        block.sort();
        blocks.push(block);
    }

    let mut folds = Vec::with_capacity(3);
    for k in 0..3 {
        let validation = blocks[k].clone();
        let mut train: Vec<NaiveDate> = Vec::new();
        for (j, b) in blocks.iter().enumerate() {
            if j != k {
                train.extend_from_slice(b);
            }
        }
        train.sort();
        let fold = FoldSpec {
            name: format!("fold{}", k + 1),
            train_dates: train,
            validation_dates: validation,
            test_dates: test_dates.to_vec(),
        };
        check_gap(&fold)?;
        folds.push(fold);
    }
    Ok(folds)
}

/// Exhaustive pairwise check of the half-year gap.
fn check_gap(fold: &FoldSpec) -> Result<()> {
    for &t in &fold.train_dates {
        for &v in fold.validation_dates.iter().chain(&fold.test_dates) {
            let gap = (v - t).num_days().abs();
            if gap < MIN_GAP_DAYS {
                return Err(Error::FoldGapViolation(format!(
                    "{}: train date {t} and evaluation date {v} are only {gap} days apart",
                    fold.name
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn days(from: (i32, u32, u32), to: (i32, u32, u32)) -> Vec<NaiveDate> {
        let a = NaiveDate::from_ymd_opt(from.0, from.1, from.2).unwrap();
        let b = NaiveDate::from_ymd_opt(to.0, to.1, to.2).unwrap();
        let mut out = Vec::new();
        let mut d = a;
        while d <= b {
            out.push(d);
            d = d.succ_opt().unwrap();
        }
        out
    }

    fn paper_shaped_dates() -> Vec<NaiveDate> {
        let mut dates = Vec::new();
        dates.extend(days((2015, 1, 1), (2015, 3, 31)));
        dates.extend(days((2015, 10, 1), (2016, 3, 31)));
        dates.extend(days((2016, 10, 1), (2017, 3, 31)));
        dates.extend(days((2017, 10, 1), (2017, 12, 31)));
        dates.retain(|d| matches!(d.month(), 10..=12 | 1..=3));
        dates
    }

    #[test]
    fn paper_layout_blocks_match_expected_pattern() {
        let folds = make_folds(&paper_shaped_dates(), &[]).unwrap();
        assert_eq!(folds.len(), 3);
        // Fold 1 validates on Oct-Dec 2015 + Jan-Mar 2016.
        let v1 = &folds[0].validation_dates;
        assert!(v1.iter().all(|d| {
            (d.year() == 2015 && d.month() >= 10) || (d.year() == 2016 && d.month() <= 3)
        }));
        // Fold 2 validates on Oct-Dec 2016 + Jan-Mar 2017.
        let v2 = &folds[1].validation_dates;
        assert!(v2.iter().all(|d| {
            (d.year() == 2016 && d.month() >= 10) || (d.year() == 2017 && d.month() <= 3)
        }));
        // Fold 3 validates on Oct-Dec 2017 + Jan-Mar 2015.
        let v3 = &folds[2].validation_dates;
        assert!(v3.iter().all(|d| {
            (d.year() == 2017 && d.month() >= 10) || (d.year() == 2015 && d.month() <= 3)
        }));
        assert!(v3.iter().any(|d| d.year() == 2015));

        // The three validation blocks cover every date exactly once.
        let mut all: Vec<NaiveDate> = folds.iter().flat_map(|f| f.validation_dates.clone()).collect();
        all.sort();
        let mut input = paper_shaped_dates();
        input.sort();
        assert_eq!(all, input);

        // Each fold trains on the complement of its validation block.
        for f in &folds {
            assert_eq!(f.train_dates.len() + f.validation_dates.len(), input.len());
            assert!(f.train_dates.iter().all(|d| !f.validation_dates.contains(d)));
        }
    }

    #[test]
    fn single_block_cannot_form_three_folds() {
        let dates = days((2015, 10, 1), (2015, 12, 31));
        assert!(matches!(
            make_folds(&dates, &[]),
            Err(Error::FoldGapViolation(_))
        ));
    }

    #[test]
    fn gap_between_train_and_validation_is_at_least_180_days() {
        let folds = make_folds(&paper_shaped_dates(), &[]).unwrap();
        for f in &folds {
            for &t in &f.train_dates {
                for &v in &f.validation_dates {
                    assert!(
                        (v - t).num_days().abs() >= MIN_GAP_DAYS,
                        "{}: {t} vs {v}",
                        f.name
                    );
                }
            }
        }
    }

    #[test]
    fn natural_three_winters_also_fold() {
        let mut dates = Vec::new();
        dates.extend(days((2015, 10, 1), (2016, 3, 31)));
        dates.extend(days((2016, 10, 1), (2017, 3, 31)));
        dates.extend(days((2017, 10, 1), (2018, 3, 31)));
        dates.retain(|d| matches!(d.month(), 10..=12 | 1..=3));
        let folds = make_folds(&dates, &[]).unwrap();
        assert_eq!(folds.len(), 3);
        for f in &folds {
            for &t in &f.train_dates {
                for &v in &f.validation_dates {
                    assert!((v - t).num_days().abs() >= MIN_GAP_DAYS);
                }
            }
        }
    }

    #[test]
    fn test_dates_participate_in_the_gap_check() {
        let dates = paper_shaped_dates();
        // A test date inside the training period violates the gap.
        let bad_test = vec![NaiveDate::from_ymd_opt(2016, 11, 5).unwrap()];
        assert!(matches!(
            make_folds(&dates, &bad_test),
            Err(Error::FoldGapViolation(_))
        ));
        // The paper-shaped test period (a year later) is fine.
        let good_test = days((2018, 11, 1), (2018, 12, 31));
        assert!(make_folds(&dates, &good_test).is_ok());
    }

    #[test]
    fn summer_dates_are_rejected() {
        let mut dates = paper_shaped_dates();
        dates.push(NaiveDate::from_ymd_opt(2016, 7, 15).unwrap());
        assert!(matches!(
            make_folds(&dates, &[]),
            Err(Error::FoldGapViolation(_))
        ));
    }
}
