use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CLASS_PLACEHOLDER: &str = "{class}";
pub const AXIS_PLACEHOLDER: &str = "{axis}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub body: String,
    #[serde(default)]
    pub axis_name: Option<String>,
    #[serde(default)]
    pub axis_values: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub template_id: String,
    pub axis_value: Option<String>,
    pub text: String,
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Error::Template {
            id: self.template_id.clone(),
            message: m.into(),
        };
        if !self.body.contains(CLASS_PLACEHOLDER) {
            return Err(err("body lacks {class}"));
        }
        match &self.axis_values {
            Some(values) => {
                if !self.body.contains(AXIS_PLACEHOLDER) {
                    return Err(err("axis values given but body lacks {axis}"));
                }
                if values.is_empty() {
                    return Err(err("empty axis value list"));
                }
            }
            None if self.body.contains(AXIS_PLACEHOLDER) => {
                return Err(err("body uses {axis} but no axis values are given"));
            }
            None => {}
        }
        Ok(())
    }

    pub fn has_axis_value(&self, value: &str) -> bool {
        self.axis_values
            .as_ref()
            .is_some_and(|vs| vs.iter().any(|v| v == value))
    }
}

/// Display form of a class label: underscores become spaces.
pub fn display_class_name(label: &str) -> String {
    label.replace('_', " ")
}

fn find_placeholder(s: &str) -> Option<&str> {
    let start = s.find('{')?;
    let end = start + s[start..].find('}')?;
    let inner = &s[start + 1..end];
    (!inner.is_empty() && inner.chars().all(|c| c.is_alphanumeric() || c == '_')).then(|| &s[start..=end])
}

/// One prompt per axis value, in axis order; a single prompt without an axis.
pub fn render_prompts(template: &PromptTemplate, class_name: &str) -> Result<Vec<RenderedPrompt>> {
    template.validate()?;
    let class_body = template.body.replace(CLASS_PLACEHOLDER, &display_class_name(class_name));
    let rendered: Vec<RenderedPrompt> = match &template.axis_values {
        None => vec![RenderedPrompt {
            template_id: template.template_id.clone(),
            axis_value: None,
            text: class_body,
        }],
        Some(values) => values
            .iter()
            .map(|v| RenderedPrompt {
                template_id: template.template_id.clone(),
                axis_value: Some(v.clone()),
                text: class_body.replace(AXIS_PLACEHOLDER, v),
            })
            .collect(),
    };
    for p in &rendered {
        if let Some(ph) = find_placeholder(&p.text) {
            return Err(Error::Template {
                id: template.template_id.clone(),
                message: format!("unresolved placeholder {ph} in {:?}", p.text),
            });
        }
    }
    Ok(rendered)
}

/// Domain prompt sets. `lookup` by id: `dermatology`, `bird`, `flower`,
/// `airplane`.
pub mod builtin {
    use super::PromptTemplate;

    pub fn dermatology() -> PromptTemplate {
        PromptTemplate {
            template_id: "dermatology".into(),
            body: "You are a dermatology disease describer. Describe what an image of {class} \
                   might look like on a person's {axis}."
                .into(),
            axis_name: Some("body part".into()),
            axis_values: Some(
                ["face", "neck", "arms", "torso", "legs", "scalp", "hands", "feet"]
                    .map(String::from)
                    .to_vec(),
            ),
        }
    }

    pub fn bird() -> PromptTemplate {
        PromptTemplate {
            template_id: "bird".into(),
            body: "You are a bird species describer. Describe what an image of a {axis} {class} \
                   might look like."
                .into(),
            axis_name: Some("gender".into()),
            axis_values: Some(vec!["male".into(), "female".into()]),
        }
    }

    pub fn flower() -> PromptTemplate {
        PromptTemplate {
            template_id: "flower".into(),
            body: "You are a flower describer. Describe what an image of a flower of {class} \
                   might look like."
                .into(),
            axis_name: None,
            axis_values: None,
        }
    }

    pub fn airplane() -> PromptTemplate {
        PromptTemplate {
            template_id: "airplane".into(),
            body: "You are an airplane model describer. Please describe distinguishing \
                   characteristics of what the plane looks like in 2-3 sentences. What would a \
                   plane of type {class} look like?"
                .into(),
            axis_name: None,
            axis_values: None,
        }
    }

    pub fn lookup(id: &str) -> Option<PromptTemplate> {
        match id {
            "dermatology" => Some(dermatology()),
            "bird" => Some(bird()),
            "flower" => Some(flower()),
            "airplane" => Some(airplane()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dermatology_prompt_text() {
        let mut t = builtin::dermatology();
        t.axis_values = Some(vec!["mouth".into()]);
        let p = render_prompts(&t, "behcets disease").unwrap();
        assert_eq!(
            p[0].text,
            "You are a dermatology disease describer. Describe what an image of behcets disease \
             might look like on a person's mouth."
        );
        assert_eq!(p[0].axis_value.as_deref(), Some("mouth"));
    }

    #[test]
    fn bird_prompts_one_per_gender() {
        let p = render_prompts(&builtin::bird(), "Red-winged Blackbird").unwrap();
        assert_eq!(p.len(), 2);
        assert!(p[0].text.contains("a male Red-winged Blackbird might"));
        assert!(p[1].text.contains("a female Red-winged Blackbird might"));
    }

    #[test]
    fn no_axis_single_prompt() {
        let p = render_prompts(&builtin::airplane(), "727-200").unwrap();
        assert_eq!(p.len(), 1);
        assert!(p[0].text.ends_with("What would a plane of type 727-200 look like?"));
    }

    #[test]
    fn validation_and_unresolved_placeholders() {
        let mut t = builtin::flower();
        t.body = "Describe {species}".into();
        assert!(render_prompts(&t, "rose").is_err());
        t.body = "Describe {class} in {season}".into();
        let err = render_prompts(&t, "rose").unwrap_err().to_string();
        assert!(err.contains("{season}"), "{err}");
        t.body = "Describe {class} on {axis}".into();
        assert!(render_prompts(&t, "rose").is_err());
    }

    #[test]
    fn underscores_become_spaces() {
        let p = render_prompts(&builtin::flower(), "sweet_pea").unwrap();
        assert!(p[0].text.contains("flower of sweet pea might"));
    }
}
