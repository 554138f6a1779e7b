use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hashing::substream;
use crate::matcher::PairDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainBatch {
    pub image_ids: Vec<String>,
    /// `caption_ids[i]` is paired with `image_ids[i]`.
    pub caption_ids: Vec<String>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }
}

/// One pass over the images in shuffled order, each paired with one caption
/// drawn uniformly from its matched set. A trailing batch shorter than
/// `batch_size` is dropped.
pub fn sample_epoch_batches(pairs: &PairDataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<TrainBatch>> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty pair dataset"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if batch_size > pairs.images.len() {
        return Err(Error::invalid(format!(
            "batch size {batch_size} exceeds the {} paired images",
            pairs.images.len()
        )));
    }
    let mut rng = substream(epoch_seed, &[]);
    let mut order: Vec<usize> = (0..pairs.images.len()).collect();
    order.shuffle(&mut rng);
    let mut batches = Vec::with_capacity(order.len() / batch_size);
    for chunk in order.chunks_exact(batch_size) {
        let mut batch = TrainBatch {
            image_ids: Vec::with_capacity(batch_size),
            caption_ids: Vec::with_capacity(batch_size),
        };
        for &i in chunk {
            let img = &pairs.images[i];
            if img.captions.is_empty() {
                return Err(Error::invalid(format!("image {:?} has no matched captions", img.image_id)));
            }
            let c = rng.gen_range(0..img.captions.len());
            batch.image_ids.push(img.image_id.clone());
            batch.caption_ids.push(img.captions[c].clone());
        }
        batches.push(batch);
    }
    Ok(batches)
}
