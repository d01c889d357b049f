use crossbeam_channel::unbounded;

use crate::error::{Error, Result};

/// Pushes every item through `n_stages` stages, one thread per stage, so that
/// stage `s` of item `i` overlaps stage `s - 1` of item `i + 1`. Items come
/// back in input order. Each item sees exactly the same sequence of calls as
/// in [`run_sequential`], so results are bit-identical.
pub fn run_pipeline<T, F>(items: Vec<T>, n_stages: usize, stage: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, T) -> Result<T> + Sync,
{
    if n_stages == 0 || items.len() <= 1 {
        return run_sequential(items, n_stages, stage);
    }
    let n_items = items.len();
    let stage = &stage;
    std::thread::scope(|scope| {
        let (feed_tx, mut rx) = unbounded::<Result<T>>();
        for s in 0..n_stages {
            let (tx, next_rx) = unbounded();
            let input = std::mem::replace(&mut rx, next_rx);
            scope.spawn(move || {
                for item in input {
                    let out = item.and_then(|v| stage(s, v));
                    if tx.send(out).is_err() {
                        break;
                    }
                }
            });
        }
        for item in items {
            feed_tx.send(Ok(item)).expect("first stage alive");
        }
        drop(feed_tx);
        let out: Vec<Result<T>> = rx.iter().collect();
        if out.len() != n_items {
            return Err(Error::Numeric(format!(
                "pipeline returned {} of {n_items} items",
                out.len()
            )));
        }
        out.into_iter().collect()
    })
}

pub(crate) fn run_sequential<T, F>(items: Vec<T>, n_stages: usize, stage: F) -> Result<Vec<T>>
where
    F: Fn(usize, T) -> Result<T>,
{
    items
        .into_iter()
        .map(|item| (0..n_stages).try_fold(item, |v, s| stage(s, v)))
        .collect()
}
