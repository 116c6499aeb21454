//! Index selection with the crate-wide tie rules. Prices are sorted
//! ascending, so "higher price" means "higher index".

/// Largest value; ties go to the highest index.
pub(crate) fn argmax_high<I: IntoIterator<Item = (usize, f64)>>(items: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in items {
        match best {
            Some((_, b)) if v < b => {}
            _ => best = Some((k, v)),
        }
    }
    best
}

/// Smallest value; ties go to the lowest index.
pub(crate) fn argmin_low<I: IntoIterator<Item = (usize, f64)>>(items: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in items {
        match best {
            Some((_, b)) if v >= b => {}
            _ => best = Some((k, v)),
        }
    }
    best
}

/// Smallest value; ties go to the highest index.
pub(crate) fn argmin_high<I: IntoIterator<Item = (usize, f64)>>(items: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in items {
        match best {
            Some((_, b)) if v > b => {}
            _ => best = Some((k, v)),
        }
    }
    best
}
