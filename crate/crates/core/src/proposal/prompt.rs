//! Category-specific prompt templates and their default label vocabularies.

use super::Category;

/// Identifier of the yes/no hand-presence query used for seed selection.
pub const HAND_PRESENCE_ID: &str = "hand_presence_v1";

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: &'static str,
    pub categories: &'static [Category],
    /// Labels the model is asked for, grouped by category.
    pub labels: &'static [(Category, &'static [&'static str])],
    /// Text with `{task}`, `{width}`, `{height}`, `{labels}` and `{schema}` placeholders.
    pub text: &'static str,
}

/// Prompt text ready to send, tagged with the template that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub template_id: String,
    pub text: String,
    pub categories: Vec<Category>,
}

impl RenderedPrompt {
    pub fn requests(&self, category: Category) -> bool {
        self.categories.contains(&category)
    }
}

const KEYPOINT_BODY: &str = "You are annotating keypoints for a robot learning dataset.\n\
The image is a {width}x{height} frame from a video of a person performing this task: \"{task}\".\n\
Locate each of the following keypoints that is visible in the frame:\n\
{labels}\n\
{schema}";

static TEMPLATES: &[PromptTemplate] = &[
    PromptTemplate {
        id: "grasp_v1",
        categories: &[Category::Hand, Category::Tool, Category::Object],
        labels: &[
            (Category::Hand, &["wrist", "thumb_tip", "index_tip"]),
            (Category::Tool, &["tool_tip", "tool_handle"]),
            (Category::Object, &["object_center", "object_contact"]),
        ],
        text: KEYPOINT_BODY,
    },
    PromptTemplate {
        id: "hand_only_v1",
        categories: &[Category::Hand],
        labels: &[(Category::Hand, &["wrist", "thumb_tip", "index_tip", "middle_tip", "pinky_tip"])],
        text: KEYPOINT_BODY,
    },
    PromptTemplate {
        id: "tool_use_v1",
        categories: &[Category::Hand, Category::Tool],
        labels: &[
            (Category::Hand, &["wrist", "index_tip"]),
            (Category::Tool, &["tool_tip", "tool_handle", "tool_center"]),
        ],
        text: KEYPOINT_BODY,
    },
];

pub fn template(id: &str) -> Option<&'static PromptTemplate> {
    TEMPLATES.iter().find(|t| t.id == id)
}

pub fn template_ids() -> impl Iterator<Item = &'static str> {
    TEMPLATES.iter().map(|t| t.id)
}

fn schema_block(categories: &[Category]) -> String {
    let cats: Vec<&str> = categories.iter().map(|c| c.as_str()).collect();
    let mut s = String::from(
        "Reply with exactly one JSON object of this form and nothing else:\n\
         {\"keypoints\": [{\"label\": \"<label>\", \"category\": \"<category>\", \"x\": <number>, \"y\": <number>, \"confidence\": <number>}]}\n",
    );
    s.push_str(&format!("Allowed categories: {}.\n", cats.join(", ")));
    s.push_str(
        "x and y are normalized image coordinates in [0,1]: x = 0 is the left edge, x = 1 the right edge, \
         y = 0 the top edge, y = 1 the bottom edge. confidence is in [0,1]. Use each label at most once.",
    );
    if categories.contains(&Category::Hand) {
        s.push_str(" Always include the \"wrist\" keypoint.");
    }
    s
}

/// Renders a registered template. Output depends only on the inputs.
pub fn build_prompt(
    template_id: &str,
    task: &str,
    dims: (usize, usize),
) -> Result<RenderedPrompt, super::ProposalError> {
    let t = template(template_id).ok_or_else(|| super::ProposalError::UnknownTemplate(template_id.to_string()))?;
    let labels = t
        .labels
        .iter()
        .map(|(cat, names)| format!("- {}: {}", cat.as_str(), names.join(", ")))
        .collect::<Vec<_>>()
        .join("\n");
    let text = t
        .text
        .replace("{width}", &dims.0.to_string())
        .replace("{height}", &dims.1.to_string())
        .replace("{labels}", &labels)
        .replace("{schema}", &schema_block(t.categories))
        .replace("{task}", task.trim());
    Ok(RenderedPrompt { template_id: t.id.to_string(), text, categories: t.categories.to_vec() })
}

pub fn hand_presence_prompt() -> &'static str {
    "Look at this video frame. Is a human hand clearly visible, unoccluded enough to locate its wrist and fingertips? \
     Answer with a single word: yes or no."
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_task_and_schema() {
        let p = build_prompt("grasp_v1", "pick up the mug", (256, 256)).unwrap();
        assert!(p.text.contains("pick up the mug"));
        assert!(p.text.contains("256x256"));
        assert!(p.text.contains("{\"keypoints\": ["));
        assert!(p.text.contains("normalized image coordinates in [0,1]"));
        assert!(p.text.contains("wrist"));
    }

    #[test]
    fn unknown_template() {
        assert!(matches!(
            build_prompt("nope", "x", (10, 10)),
            Err(super::super::ProposalError::UnknownTemplate(id)) if id == "nope"
        ));
    }

    #[test]
    fn deterministic() {
        let a = build_prompt("tool_use_v1", "saw the plank", (320, 240)).unwrap();
        let b = build_prompt("tool_use_v1", "saw the plank", (320, 240)).unwrap();
        assert_eq!(a.text.as_bytes(), b.text.as_bytes());
    }

    #[test]
    fn every_template_renders_schema() {
        for id in template_ids() {
            let p = build_prompt(id, "t", (64, 64)).unwrap();
            assert!(!p.text.is_empty());
            assert!(p.text.contains("\"keypoints\""), "{id}");
            for placeholder in ["{task}", "{width}", "{height}", "{labels}", "{schema}"] {
                assert!(!p.text.contains(placeholder), "{id} left {placeholder}");
            }
        }
    }
}
