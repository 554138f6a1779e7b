use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Scorer;
use crate::captions::display_class_name;
use crate::embedding::{normalized_f64, Backend};
use crate::linalg::{dot, Matrix};
use crate::{matfile, Error, Result};

pub const DEFAULT_TEMPLATES: [&str; 2] = ["a photo of a {class}.", "a picture of a {class}."];

/// One unit-norm text embedding per class; scores are cosine similarities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotHead {
    /// `|Y| × d`, rows unit-norm.
    pub class_embeddings: Matrix,
    pub templates: Vec<String>,
    pub class_order: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct HeadMeta {
    format: String,
    templates: Vec<String>,
    class_order: Vec<String>,
}

/// Mean of the normalized rows, renormalized.
pub fn mean_direction(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = rows.first().ok_or_else(|| Error::invalid("no embeddings to average"))?.len();
    let mut acc = vec![0.0; d];
    for r in rows {
        for (a, x) in acc.iter_mut().zip(normalized_f64(r)?) {
            *a += x;
        }
    }
    normalized_f64(&acc)
}

pub fn build_zeroshot_head(backend: &Backend, class_names: &[String], templates: &[String]) -> Result<ZeroShotHead> {
    if class_names.is_empty() {
        return Err(Error::invalid("empty class list"));
    }
    if templates.is_empty() {
        return Err(Error::invalid("at least one template is required"));
    }
    for t in templates {
        if !t.contains("{class}") {
            return Err(Error::Template {
                id: t.clone(),
                message: "zero-shot template has no {class} placeholder".into(),
            });
        }
    }
    let mut rows = Vec::with_capacity(class_names.len());
    for class in class_names {
        let shown = display_class_name(class);
        let embs = templates
            .iter()
            .map(|t| Ok(backend.encode_text(&t.replace("{class}", &shown))?.to_f64()))
            .collect::<Result<Vec<_>>>()?;
        rows.push(mean_direction(&embs)?);
    }
    Ok(ZeroShotHead {
        class_embeddings: Matrix::from_rows(&rows),
        templates: templates.to_vec(),
        class_order: class_names.to_vec(),
    })
}

impl ZeroShotHead {
    pub fn save(&self, stem: &Path) -> Result<()> {
        matfile::write(&stem.with_extension("bin"), &[&self.class_embeddings])?;
        let meta = HeadMeta {
            format: "gist-zeroshot-head/1".into(),
            templates: self.templates.clone(),
            class_order: self.class_order.clone(),
        };
        let json = stem.with_extension("json");
        std::fs::write(&json, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&json, e))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let json = stem.with_extension("json");
        let meta: HeadMeta =
            serde_json::from_str(&std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?)?;
        let mut mats = matfile::read(&stem.with_extension("bin"))?;
        if mats.len() != 1 || mats[0].rows != meta.class_order.len() {
            return Err(Error::invalid("zero-shot head file shape does not match its metadata"));
        }
        let m = mats.pop().unwrap();
        // stored as f32; restore exact unit norm
        let rows = (0..m.rows).map(|i| normalized_f64(m.row(i))).collect::<Result<Vec<_>>>()?;
        Ok(ZeroShotHead {
            class_embeddings: Matrix::from_rows(&rows),
            templates: meta.templates,
            class_order: meta.class_order,
        })
    }
}

impl Scorer for ZeroShotHead {
    fn class_order(&self) -> &[String] {
        &self.class_order
    }

    fn dim(&self) -> usize {
        self.class_embeddings.cols
    }

    fn scores(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(embedding)?;
        let x = normalized_f64(embedding)?;
        Ok((0..self.class_embeddings.rows)
            .map(|c| dot(self.class_embeddings.row(c), &x))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_orthogonal_templates_average_to_the_diagonal() {
        let m = mean_direction(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((m[0] - 0.70710678).abs() < 1e-8 && (m[1] - 0.70710678).abs() < 1e-8);
    }

    #[test]
    fn one_template_is_its_normalized_embedding() {
        let b = Backend::open("synthetic-concept-16").unwrap();
        let classes = vec!["sea_gull".to_string()];
        let h = build_zeroshot_head(&b, &classes, &["a photo of a {class}.".into()]).unwrap();
        let direct = normalized_f64(&b.encode_text("a photo of a sea gull.").unwrap().to_f64()).unwrap();
        for (a, e) in h.class_embeddings.row(0).iter().zip(&direct) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn template_order_does_not_matter() {
        let b = Backend::open("synthetic-concept-16").unwrap();
        let classes = vec!["oak".to_string(), "elm".to_string()];
        let t: Vec<String> = DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect();
        let r: Vec<String> = t.iter().rev().cloned().collect();
        let a = build_zeroshot_head(&b, &classes, &t).unwrap();
        let c = build_zeroshot_head(&b, &classes, &r).unwrap();
        for (x, y) in a.class_embeddings.data.iter().zip(&c.class_embeddings.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_empty_inputs() {
        let b = Backend::open("synthetic").unwrap();
        assert!(build_zeroshot_head(&b, &[], &["{class}".into()]).is_err());
        assert!(build_zeroshot_head(&b, &["a".into()], &[]).is_err());
        assert!(build_zeroshot_head(&b, &["a".into()], &["no placeholder".into()]).is_err());
    }
}
