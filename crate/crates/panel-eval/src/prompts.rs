//! Prompt templates for every model call the pipeline makes.
//!
//! Templates are plain strings with named `{slot}` placeholders that are
//! substituted literally (no escaping), so the JSON examples embedded in the
//! templates survive rendering untouched. Each renderer returns the exact
//! text sent to the model; golden tests pin the rendered output.

/// Bumped whenever any template text changes; folded into stage stamps so a
/// resumed run never reuses artifacts produced by different prompt wording.
pub const PROMPTS_VERSION: &str = "1";

/// Marker an agent must emit to leave the free-debate phase. Matched
/// case-sensitively as a substring of the agent's reply.
pub const FINISH_MARKER: &str = "NO MORE COMMENTS";

/// Instruction for turning a document excerpt into stakeholder records.
/// Sent as the system text; the excerpt itself is the user text.
pub const STAKEHOLDER_EXTRACTION_TEMPLATE: &str = "\
You need to identify or construct a diverse and comprehensive set of stakeholders, their characteristics, and their perspectives or opinions for the following evaluation task:
***{task_description}***

Guidelines
- For this given paper, read one paragraph at a time. Ignore the related work section and literature list.
Step 1 - Identify ALL mentioned name entities, excluding the authors and their institutions, as well as non-human entities.
Step 2 - For each name entity (i.e., stakeholder) you identified, generate the descriptive characteristics for this stakeholder. Then extract their perspectives or opinions that are relevant to the aforementioned evaluation task. Each entry should be directly derived from the texts with supporting evidence.

Important Reminders
- If in the provided paper, no relevant information is mentioned about the evaluation task, output nothing.
- In generation, prioritize capturing a wide range of stakeholders and their perspectives, including those that might emerge from different roles, backgrounds, and needs.
- The stakeholder's perspectives or opinions should be relevant to the aforementioned evaluation task.
- Each final generated stakeholder entry should clearly include:
    1. The stakeholder name (e.g., role or representative group),
    2. The stakeholder's characteristics,
    3. The stakeholder's perspectives or opinions regarding the aforementioned evaluation task,
    4. The supporting evidence from the provided papers.

Output Format
- If the provided paper contains relevant information about the evaluation task, present the output as a structured JSON dict, with each item formatted as an object containing the following fields:
{
    \"stakeholder name\": {
        \"characteristics\": \"use one sentence to describe the stakeholder's characteristics\",
        \"perspectives\": [
            {
                \"perspective\": \"use one sentence to describe the stakeholder's perspectives or opinions\",
                \"evidence\": \"supporting evidence from the provided paper\"
            },
            {...}
        ]
    },
    \"stakeholder name\": {...}
}
- If no relevant information is found: []";

/// Instruction for consolidating stakeholder records from all documents into
/// groups with deduplicated evaluative dimensions. The model assigns every
/// record to exactly one group and picks which dimensions to keep by
/// reference, so every kept dimension keeps its source evidence.
pub const STAKEHOLDER_MERGE_TEMPLATE: &str = "\
You are consolidating stakeholder records that were extracted from several documents for the following evaluation task:
***{task_description}***

Below is a numbered list of stakeholder records. Records that describe the same real-world stakeholder role must be grouped together. Within each group, keep only the distinct evaluative dimensions and drop redundant or semantically close duplicates.

Stakeholder Records
{stakeholder_records}

Requirements
- Assign every record index to exactly one group.
- Give each group a short descriptive group name and one merged characteristics sentence.
- For each group, list the dimensions to keep as [record, dimension] index pairs into the records above. Kept dimensions must be distinct in meaning.

Output Format (as JSON structure):
{\"groups\": [{\"group_name\": \"...\", \"merged_characteristics\": \"...\", \"members\": [0, 2], \"keep_dimensions\": [[0, 0], [2, 1]]}, {...}]}";

/// Instruction for expanding one stakeholder group into full personas, one
/// per kept evaluative dimension.
pub const PERSONA_TEMPLATE: &str = "\
You need to create stakeholder personas for the following evaluation task:
***{task_description}***

Guidelines
- For the provided stakeholder perspective list, process one stakeholder at a time.
- For each mentioned perspective of the stakeholder, generate a distinct persona that embodies the corresponding perspective.
- Following the steps below, each generated persona must include these attributes:
1. Generate the persona's demographic information based on name, age, education, career, personality traits, hobbies, etc.
2. Rephrase the stakeholder perspective to match the persona.
3. Generate a specialty aligned with the persona's profile and relevant to the evaluation task.
4. Generate psychological traits describing personality, emotions, and cognitive tendencies.
5. Generate the persona's social relationships that reflect connections within the stakeholder types.

Important Reminders
- Personas should be diverse, realistic, and grounded in the stakeholder profile.
- Each distinct perspective must map to a unique persona.

Stakeholder Perspective List
{stakeholder_perspectives}

Output Format (as JSON structure):
{
  \"Stakeholder Name\": [
    {
      \"Name\": \"Full name of the persona\",
      \"Demographic Information\": \"One to two sentences describing the persona's demographic profile.\",
      \"Perspective\": \"One to two sentences outlining the persona's perspective.\",
      \"Specialty\": \"One to two sentences describing the persona's skill or expertise.\",
      \"Psychological Traits\": \"One to two sentences describing personality, emotions, etc.\",
      \"Social Relationships\": \"One to two sentences describing interactions with other stakeholders.\"
    },
    {...}
  ],
  \"Another Stakeholder Name\": [...]
}";

/// System text that instantiates one persona as an evaluator agent. Used for
/// every debate-phase call the agent makes.
pub const AGENT_SYSTEM_TEMPLATE: &str = "\
YOU ARE {agent_name}. Your demographic information is: {demographic_info}.
Your perspective is: {evaluative_dimension}.
Your specialty is: {specialty}.
Your psychological traits include {psychological_traits}.
Socially, these are your relationships: {social_relationships}.

Using your perspective and/or specialty, now you are evaluating the quality and appropriateness of AI-generated candidate {content_kind} for the following task:
***{task_description}***

The content to be evaluated is: {content}
The related context for the evaluation content is: {context}
You should use this format for your evaluation: {response_format}

Follow the steps below:
1. In phase 1 of the evaluation, you need to generate your initial evaluation result.
2. In phase 2 of the evaluation, there are other stakeholders with different specialties who are also doing the same evaluation task, and you will participate in a debate. During debate, you will express your opinions and listen to others' perspectives to decide whether you should change your evaluation decision.

When others express their feedback, reflect on their input from your own perspective. Consider whether their viewpoints reveal aspects you may have overlooked. If others comment on your evaluation, you should reflect on your evaluation and decide whether to accept others' comments. However, you do not need to agree with others. You must base your evaluation on your own perspective and/or specialty.

When it's your turn to speak, you may:
- Offer comments or critiques on previous feedback if you find any issues or meaningful contrasts.
- If you find all prior evaluations reasonable and have no further comments, respond with \"NO MORE COMMENTS\" and provide your final evaluation in the aforementioned format.

Important Reminder:
Your feedback and score must remain grounded in your own perspective and/or area of expertise. Do not generate evaluations that duplicate or closely mirror those of other agents.";

/// User text for the independent first-pass evaluation.
pub const PHASE1_TEMPLATE: &str = "\
You are now in Phase 1 of the evaluation process. You need to provide your initial feedback and score of the content based on your perspective and/or specialty.

The content to be evaluated: {content}
The related context for the evaluation content: {context}
Response format: {response_format}

Instructions:
- Your evaluation should reflect your own unique perspective and area of expertise.
- Focus on assessing the quality and appropriateness of the content for the given evaluation scenario.
- Your response should use the exact format provided above.

Important Reminder:
Do not replicate evaluations from others. Stay grounded in your own perspective.";

/// User text for one free-debate turn. `{phase1_evaluations}` carries every
/// agent's first-pass evaluation; `{debate_turns}` carries the debate turns
/// spoken so far (or a placeholder when the debate is just starting).
pub const PHASE2_TEMPLATE: &str = "\
1. Debate Start:
You are now entering Phase 2 of the evaluation process, where you need to participate in a debate process with other stakeholders like you.

Here are the initial evaluations from all stakeholders: {phase1_evaluations}
Your task is to evaluate these initial assessments based on your perspective and/or specialty.
You should also reflect on the feedback from other stakeholders and decide whether to agree, disagree, or add nuances to the discussion based on your perspective and/or specialty.

2. During Debate:
Here is the debate so far: {debate_turns}

Now, it's your turn to speak. Based on all previous feedback from the debates and your reflection, you can decide whether to agree, disagree, or add nuances to the discussion based on your perspective and/or specialty.

If you have no more points to discuss, respond with \"NO MORE COMMENTS\" followed by your final evaluation in this format: {response_format}

Important Reminder:
Your feedback and score should be based on your perspective and/or specialty. Avoid generating evaluations that duplicate or closely mirror those of other agents.";

/// User text for the final synthesis call. The numeric group score is always
/// computed locally; the model only writes the textual synthesis.
pub const AGGREGATOR_TEMPLATE: &str = "\
You are an impartial evaluation aggregator. Your task is to review the evaluations from multiple stakeholders and provide a comprehensive summary that fairly represents all perspectives.

Your summary should include key areas of agreement and disagreement, and an overall assessment that reflects the range of perspectives.

You are given all final evaluations in {aggregated_content} and their average score in {average_score}.

Format your response as a JSON object with the following structure:
{
    'Feedback': 'A clear, concise synthesis of stakeholder feedback, highlighting consensus, divergence, and an overall interpretation.',
    'Average Score': x
}";

/// User text asking the debate coordinator to pick the next speaker. The
/// engine falls back to a deterministic choice when the reply names nobody
/// eligible.
pub const COORDINATOR_TEMPLATE: &str = "\
You are the moderator of a free debate among stakeholder evaluator agents. Review the debate history and choose which agent should speak next, prioritizing agents with unresolved disagreements or unaddressed perspectives.

Debate history:
{debate_history}

Agents who have not finished: {unfinished_agents}

Reply with exactly one name from that list.";

/// Single-call rubric judge prompt scored on a five-point scale.
pub const RUBRIC_JUDGE_TEMPLATE: &str = "\
Your task is to rate the {content_kind} based on the evaluation criteria and the task description, following the specified evaluation steps.

Please make sure to read and understand these instructions carefully. Keep this document open while reviewing and refer to it as needed.

Task Description:
{task_description}

Evaluation Criteria:
Overall Quality: The overall quality of the {content_kind} should reflect all of the following dimensions: {criteria}.

Evaluation Steps:
1. Read the source text carefully.
2. Read the AI-generated {content_kind} and compare it to the source text.
3. Assign a score for the overall quality (and other dimensions) of the AI-generated content using a 5-point Likert scale: 1 - Strongly Disagree; 2 - Disagree; 3 - Neither Agree nor Disagree; 4 - Agree; 5 - Strongly Agree

Source Text:
{context}

AI-Generated Content:
{content}

Evaluation Form (Output Scores ONLY):
Overall Quality: 1 / 2 / 3 / 4 / 5";

/// Two-role discussion judge prompt. The evaluated content fills the first
/// assistant slot; the second slot is intentionally left empty so the judges
/// rate a single candidate.
pub const DUAL_ROLE_JUDGE_TEMPLATE: &str = "\
{context}

[The Start of Assistant 1's {content_kind}]
{content}
[The End of Assistant 1's {content_kind}]

[The Start of Assistant 2's {content_kind}]

[The End of Assistant 2's {content_kind}]

[System]
We would like to request your feedback on the performance of the two AI assistants' generated {content_kind} in response to the {context_kind} displayed above.
Please focus your response on the utility of the {content_kind} for the following task: {task_description}.
Assign an overall score for each assistant's {content_kind} on a five-point Likert scale, with the following standards: 1 - Strongly Disagree; 2 - Disagree; 3 - Neither agree nor disagree; 4 - Agree; 5 - Strongly Agree

Output with the following format strictly:
Evaluation evidence: <your evaluation explanation>
The score of Assistant one: <score>
The score of Assistant two: <score>";

/// Appended to a structured-output retry after an unusable reply.
pub const JSON_REPAIR_INSTRUCTION: &str = "reply with valid JSON only";

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Renders the stakeholder-extraction system text for one evaluation task.
pub fn extraction_system(task_description: &str) -> String {
    fill(
        STAKEHOLDER_EXTRACTION_TEMPLATE,
        &[("task_description", task_description)],
    )
}

/// Renders the consolidation request over the numbered record listing.
pub fn merge_user(task_description: &str, stakeholder_records: &str) -> String {
    fill(
        STAKEHOLDER_MERGE_TEMPLATE,
        &[
            ("task_description", task_description),
            ("stakeholder_records", stakeholder_records),
        ],
    )
}

/// Renders the persona-construction request for one stakeholder group.
pub fn persona_user(task_description: &str, stakeholder_perspectives: &str) -> String {
    fill(
        PERSONA_TEMPLATE,
        &[
            ("task_description", task_description),
            ("stakeholder_perspectives", stakeholder_perspectives),
        ],
    )
}

/// Slots shared by the agent system text; gathered in one struct so the
/// debate engine can render it from a persona and an evaluation item.
pub struct AgentSystemSlots<'a> {
    pub agent_name: &'a str,
    pub demographic_info: &'a str,
    pub evaluative_dimension: &'a str,
    pub specialty: &'a str,
    pub psychological_traits: &'a str,
    pub social_relationships: &'a str,
    pub content_kind: &'a str,
    pub task_description: &'a str,
    pub content: &'a str,
    pub context: &'a str,
    pub response_format: &'a str,
}

/// Renders the persona-instantiation system text.
pub fn agent_system(slots: &AgentSystemSlots) -> String {
    fill(
        AGENT_SYSTEM_TEMPLATE,
        &[
            ("agent_name", slots.agent_name),
            ("demographic_info", slots.demographic_info),
            ("evaluative_dimension", slots.evaluative_dimension),
            ("specialty", slots.specialty),
            ("psychological_traits", slots.psychological_traits),
            ("social_relationships", slots.social_relationships),
            ("content_kind", slots.content_kind),
            ("task_description", slots.task_description),
            ("content", slots.content),
            ("context", slots.context),
            ("response_format", slots.response_format),
        ],
    )
}

/// Renders the first-pass evaluation request.
pub fn phase1_user(content: &str, context: &str, response_format: &str) -> String {
    fill(
        PHASE1_TEMPLATE,
        &[
            ("content", content),
            ("context", context),
            ("response_format", response_format),
        ],
    )
}

/// Renders one free-debate turn request.
pub fn phase2_user(phase1_evaluations: &str, debate_turns: &str, response_format: &str) -> String {
    fill(
        PHASE2_TEMPLATE,
        &[
            ("phase1_evaluations", phase1_evaluations),
            ("debate_turns", debate_turns),
            ("response_format", response_format),
        ],
    )
}

/// Renders the synthesis request over the final evaluations.
pub fn aggregator_user(aggregated_content: &str, average_score: f64) -> String {
    fill(
        AGGREGATOR_TEMPLATE,
        &[
            ("aggregated_content", aggregated_content),
            ("average_score", &format!("{average_score}")),
        ],
    )
}

/// Renders the next-speaker request for the debate coordinator.
pub fn coordinator_user(debate_history: &str, unfinished_agents: &str) -> String {
    fill(
        COORDINATOR_TEMPLATE,
        &[
            ("debate_history", debate_history),
            ("unfinished_agents", unfinished_agents),
        ],
    )
}

/// Renders the rubric judge request for one item.
pub fn rubric_judge_user(
    content_kind: &str,
    task_description: &str,
    criteria: &str,
    context: &str,
    content: &str,
) -> String {
    fill(
        RUBRIC_JUDGE_TEMPLATE,
        &[
            ("content_kind", content_kind),
            ("task_description", task_description),
            ("criteria", criteria),
            ("context", context),
            ("content", content),
        ],
    )
}

/// Renders the two-role discussion judge request for one item.
pub fn dual_role_judge_user(
    content_kind: &str,
    context_kind: &str,
    task_description: &str,
    context: &str,
    content: &str,
) -> String {
    fill(
        DUAL_ROLE_JUDGE_TEMPLATE,
        &[
            ("content_kind", content_kind),
            ("context_kind", context_kind),
            ("task_description", task_description),
            ("context", context),
            ("content", content),
        ],
    )
}

/// One line of rendered debate history: `[speaker]: text`.
pub fn history_line(speaker: &str, text: &str) -> String {
    format!("[{speaker}]: {text}")
}
