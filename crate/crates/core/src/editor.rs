//! Splitting a coarse row of a head into subcategory rows.

use crate::alignment::{synthesize_modifier, AlignmentModel};
use crate::dictionary::{ModifierDictionary, ModifierEntry};
use crate::embedding::TextEmbeddingTable;
use crate::error::{Error, Result};
use crate::head::{ClassifierHead, EditMethod, EditedHead, Provenance};
use crate::optim::Prng;
use crate::taxonomy::SplitSpec;
use crate::tensor::{argmax, cosine_similarity, Tensor};

/// Standard deviation of rows drawn by [`EditMethod::Random`].
pub const RANDOM_INIT_STD: f64 = 0.02;

/// Dictionary entry whose modifier text embedding is closest to the target's.
pub fn retrieve_modifier<'d>(
    dict: &'d ModifierDictionary,
    emb: &TextEmbeddingTable,
    target_modifier_text: &str,
) -> Result<(usize, &'d ModifierEntry)> {
    if dict.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let query = emb.get(target_modifier_text)?;
    let scores = dict
        .entries
        .iter()
        .map(|e| cosine_similarity(emb.get(&e.modifier_text)?, query))
        .collect::<Result<Vec<f64>>>()?;
    let i = argmax(&scores).expect("non-empty");
    Ok((i, &dict.entries[i]))
}

/// Entry maximizing full-label similarity plus modifier similarity (unweighted sum).
pub fn retrieve_modifier_joint<'d>(
    dict: &'d ModifierDictionary,
    emb: &TextEmbeddingTable,
    target_full_text: &str,
    target_modifier_text: &str,
) -> Result<(usize, &'d ModifierEntry)> {
    if dict.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let full = emb.get(target_full_text)?;
    let modifier = emb.get(target_modifier_text)?;
    let scores = dict
        .entries
        .iter()
        .map(|e| {
            Ok(cosine_similarity(emb.get(&e.full_text)?, full)?
                + cosine_similarity(emb.get(&e.modifier_text)?, modifier)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let i = argmax(&scores).expect("non-empty");
    Ok((i, &dict.entries[i]))
}

/// `w_c + v_m`, and `b_c + bias_delta` when both are present.
pub fn compose_weight(
    w_c: &[f32],
    b_c: Option<f32>,
    entry: &ModifierEntry,
) -> Result<(Vec<f32>, Option<f32>)> {
    let row = add(w_c, &entry.vector)?;
    let bias = match (b_c, entry.bias_delta) {
        (Some(b), Some(delta)) => Some(b + delta),
        (b, _) => b,
    };
    Ok((row, bias))
}

fn add(a: &[f32], b: &[f32]) -> Result<Vec<f32>> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

/// Inputs a split method may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct SplitDeps<'a> {
    pub dictionary: Option<&'a ModifierDictionary>,
    pub embeddings: Option<&'a TextEmbeddingTable>,
    pub alignment: Option<&'a AlignmentModel>,
}

impl<'a> SplitDeps<'a> {
    fn need<T>(dep: Option<T>, method: EditMethod, what: &str) -> Result<T> {
        dep.ok_or_else(|| Error::MissingDependency {
            method: method.to_string(),
            what: what.to_string(),
        })
    }

    /// Checks that every dependency `method` needs is present.
    pub fn check(&self, method: EditMethod) -> Result<()> {
        match method {
            EditMethod::Retrieval | EditMethod::Joint => {
                Self::need(self.dictionary, method, "modifier dictionary")?;
                Self::need(self.embeddings, method, "text embeddings")?;
            }
            EditMethod::Alignment => {
                Self::need(self.alignment, method, "alignment model")?;
                Self::need(self.embeddings, method, "text embeddings")?;
            }
            EditMethod::CoarseCopy | EditMethod::Random => {}
        }
        Ok(())
    }
}

/// Replaces the coarse row with one row per subcategory.
///
/// Retained rows keep their order and exact bits; new rows are appended in
/// subcategory order.
pub fn split_head(
    head: &ClassifierHead,
    split: &SplitSpec,
    method: EditMethod,
    deps: &SplitDeps<'_>,
    seed: u64,
) -> Result<EditedHead> {
    let c = head
        .index_of(&split.coarse_id)
        .ok_or_else(|| Error::UnknownLabel(split.coarse_id.clone()))?;
    deps.check(method)?;
    for s in &split.subcategories {
        if head.index_of(&s.id).is_some() {
            return Err(Error::SplitCollision(s.id.clone()));
        }
    }
    let w_c = head.row(c);
    let b_c = head.bias_of(c);
    let d = head.dim();
    let mut rng = Prng::new(seed);

    let mut labels = Vec::with_capacity(head.num_labels() - 1 + split.k());
    let mut rows: Vec<f32> = Vec::with_capacity((head.num_labels() - 1 + split.k()) * d);
    let mut bias = head.bias().map(|_| Vec::with_capacity(labels.capacity()));
    for i in (0..head.num_labels()).filter(|&i| i != c) {
        labels.push(head.labels()[i].clone());
        rows.extend_from_slice(head.row(i));
        if let Some(b) = &mut bias {
            b.push(head.bias_of(i).expect("bias present"));
        }
    }

    let mut provenance = Vec::with_capacity(split.k());
    for sub in &split.subcategories {
        let mut source_entry = None;
        let mut source_text = None;
        let (row, b) = match method {
            EditMethod::Retrieval | EditMethod::Joint => {
                let dict = deps.dictionary.expect("checked");
                let emb = deps.embeddings.expect("checked");
                let (i, entry) = if method == EditMethod::Retrieval {
                    retrieve_modifier(dict, emb, &sub.modifier_text)?
                } else {
                    retrieve_modifier_joint(dict, emb, &sub.full_text, &sub.modifier_text)?
                };
                source_entry = Some(i);
                source_text = Some(entry.full_text.clone());
                compose_weight(w_c, b_c, entry)?
            }
            EditMethod::Alignment => {
                let model = deps.alignment.expect("checked");
                let v = synthesize_modifier(model, &sub.modifier_text, deps.embeddings.expect("checked"))?;
                source_text = Some(sub.modifier_text.clone());
                (add(w_c, &v)?, b_c)
            }
            EditMethod::CoarseCopy => (w_c.to_vec(), b_c),
            EditMethod::Random => {
                let row = (0..d)
                    .map(|_| rng.gaussian(0.0, RANDOM_INIT_STD) as f32)
                    .collect();
                (row, b_c.map(|_| 0.0))
            }
        };
        labels.push(sub.id.clone());
        rows.extend_from_slice(&row);
        if let Some(bs) = &mut bias {
            bs.push(b.expect("bias present"));
        }
        provenance.push(Provenance {
            id: sub.id.clone(),
            method,
            source_entry,
            source_text,
        });
    }

    let weights = Tensor::matrix(labels.len(), d, rows)?;
    Ok(EditedHead {
        head: ClassifierHead::new(labels, weights, bias)?,
        provenance,
    })
}

/// Reassigns samples predicted as the coarse category to the candidate text
/// whose embedding is most similar to the sample's own embedding.
pub fn vlm_baseline_assign(
    base_predictions: &[String],
    video_embeddings: &Tensor,
    candidate_ids: &[String],
    candidate_texts: &[String],
    emb: &TextEmbeddingTable,
    coarse_id: &str,
) -> Result<Vec<String>> {
    if video_embeddings.rows() != base_predictions.len() {
        return Err(Error::DimMismatch {
            expected: base_predictions.len(),
            got: video_embeddings.rows(),
        });
    }
    if candidate_ids.len() != candidate_texts.len() || candidate_ids.is_empty() {
        return Err(Error::DimMismatch {
            expected: candidate_ids.len(),
            got: candidate_texts.len(),
        });
    }
    let candidates = candidate_texts
        .iter()
        .map(|t| emb.get(t))
        .collect::<Result<Vec<_>>>()?;
    base_predictions
        .iter()
        .enumerate()
        .map(|(i, pred)| {
            if pred != coarse_id {
                return Ok(pred.clone());
            }
            let video = video_embeddings.row(i);
            let scores = candidates
                .iter()
                .map(|c| cosine_similarity(video, c))
                .collect::<Result<Vec<f64>>>()?;
            Ok(candidate_ids[argmax(&scores).expect("non-empty")].clone())
        })
        .collect()
}
