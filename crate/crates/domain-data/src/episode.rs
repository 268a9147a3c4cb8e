//! Few-shot episode sampling: k support and q query samples per class,
//! drawn without replacement and disjoint by sample index.

use nn_engine::{Dataset, RngStream};

use crate::error::{invalid_arg, DataError, Result};

#[derive(Debug, Clone)]
pub struct Episode {
    pub support: Dataset,
    pub query: Dataset,
}

pub fn sample_episode(
    data: &Dataset,
    classes: usize,
    k: usize,
    q: usize,
    rng: &mut RngStream,
) -> Result<Episode> {
    if k == 0 || q == 0 {
        return invalid_arg("episode needs k >= 1 support and q >= 1 query per class");
    }
    let groups = data.indices_by_class(classes);
    let mut support_idx = Vec::with_capacity(classes * k);
    let mut query_idx = Vec::with_capacity(classes * q);
    for (class, group) in groups.iter().enumerate() {
        if group.len() < k + q {
            return Err(DataError::InvalidArgument(format!(
                "class {class} has {} samples, needs {}",
                group.len(),
                k + q
            )));
        }
        let draw = rng.sample_distinct(group.len(), k + q);
        support_idx.extend(draw[..k].iter().map(|&i| group[i]));
        query_idx.extend(draw[k..].iter().map(|&i| group[i]));
    }
    let (s_img, s_lab) = data.batch(&support_idx);
    let (q_img, q_lab) = data.batch(&query_idx);
    Ok(Episode {
        support: Dataset::new(s_img, s_lab)?,
        query: Dataset::new(q_img, q_lab)?,
    })
}
