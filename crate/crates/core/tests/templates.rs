//! Built-in templates rendered with one demonstration and one query must
//! reproduce the published prompt layouts character for character.

use linc_core::prompt::{assemble_prompt, tabular_input, Demonstration, Input, PromptTemplate};

const POS: &str = "Perhaps the best sports movie I have ever seen.";
const NEG: &str = "This pathetic junk is barely an hour long.";

fn render(name: &str, demo: Demonstration, query: Input) -> String {
    let t = PromptTemplate::builtin(name).unwrap_or_else(|| panic!("no template {name}"));
    let ls = t.label_space().unwrap();
    assemble_prompt(&query, &[demo], &t, &ls).unwrap().rendered_text
}

#[test]
fn sst2_formats() {
    let cases = [
        ("sst2-format1", 0, format!("Review: {POS}\nSentiment: Positive\nReview: {NEG}\nSentiment:")),
        ("sst2-format2", 0, format!("Input: {POS}\nPrediction: Positive\nInput: {NEG}\nPrediction:")),
        ("sst2-format3", 0, format!("Review: {POS}\nSentiment: good\nReview: {NEG}\nSentiment:")),
        ("sst2-format4", 0, format!("Input: {POS}\nPrediction: good\nInput: {NEG}\nPrediction:")),
        (
            "sst2-format5",
            0,
            format!(
                "{POS} My overall feeling was that the movie was good\n\n\
                 {NEG} My overall feeling was that the movie was"
            ),
        ),
        (
            "sst2-format6",
            0,
            format!(
                "Review: {POS}\nQuestion: Is the sentiment of the above review Positive or Negative?\n\
                 Answer: Positive\nReview: {NEG}\n\
                 Question: Is the sentiment of the above review Positive or Negative?\nAnswer:"
            ),
        ),
        ("sst2", 0, format!("Review: {POS}\nSentiment: Positive\n\nReview: {NEG}\nSentiment:")),
    ];
    for (name, label, expected) in cases {
        assert_eq!(render(name, Demonstration::new(POS, label), NEG.into()), expected, "{name}");
    }
}

#[test]
fn dataset_templates() {
    let agnews = render(
        "agnews",
        Demonstration::new(
            "UK lender Barclays says it is in talks with South Africa's Absa about buying a majority stake in the bank.",
            2,
        ),
        "New music sharing network allows users to amass points by referring buyers.".into(),
    );
    assert_eq!(
        agnews,
        "Classify the news articles into the categories of World, Sports, Business, and Technology.\n\n\
         Article: UK lender Barclays says it is in talks with South Africa's Absa about buying a majority stake in the bank.\n\
         Answer: Business\n\n\
         Article: New music sharing network allows users to amass points by referring buyers.\nAnswer:"
    );

    let trec = render(
        "trec",
        Demonstration::new("What does the abbreviation AIDS stand for?", 5),
        "What country do the Galapagos Islands belong to?".into(),
    );
    assert_eq!(
        trec,
        "Classify the questions based on whether their answer type is a Number, Location, Person, Description, Entity, or Abbreviation.\n\n\
         Question: What does the abbreviation AIDS stand for?\nAnswer Type: Abbreviation\n\n\
         Question: What country do the Galapagos Islands belong to?\nAnswer Type:"
    );

    let dbpedia = render(
        "dbpedia",
        Demonstration::new("Hoodlum & Son is a 2003 comedy-crime film.", 12),
        "Nachan Main Audhay Naal is the seventh album.".into(),
    );
    assert!(dbpedia.starts_with("Classify the documents based on whether they are about a Company, School, Artist, Athlete, Politician, Transportation, Building, Nature, Village, Animal, Plant, Album, Film, or Book.\n\n"));
    assert!(dbpedia.contains("Article: Hoodlum & Son is a 2003 comedy-crime film.\nAnswer: Film\n\n"));
    assert!(dbpedia.ends_with("\nAnswer:"));

    let sst5 = render(
        "sst5",
        Demonstration::new("The film is bright and flashy in all the right ways.", 4),
        "The film never finds its tone and several scenes run too long.".into(),
    );
    assert_eq!(
        sst5,
        "Review: The film is bright and flashy in all the right ways.\nSentiment: great\n\n\
         Review: The film never finds its tone and several scenes run too long.\nSentiment:"
    );

    let subj = render(
        "subj",
        Demonstration::new("All social structures break down.", 0),
        "A zombie movie in every sense of the word.".into(),
    );
    assert_eq!(
        subj,
        "Input: All social structures break down.\nType: objective\n\nInput: A zombie movie in every sense of the word.\nType:"
    );

    let rte = render(
        "rte",
        Demonstration::new(
            Input::Pair {
                premise: "Experts say that Mr. Abbas will need that big win.".into(),
                hypothesis: "Analysts had said that Mr. Abbas needed a large margin of victory.".into(),
            },
            0,
        ),
        Input::Pair {
            premise: "The city is twinned with Glasgow, Dortmund, Pleven, and Le Mans.".into(),
            hypothesis: "Dortmund is twinned with Glasgow.".into(),
        },
    );
    assert_eq!(
        rte,
        "Experts say that Mr. Abbas will need that big win.\n\
         question: Analysts had said that Mr. Abbas needed a large margin of victory. True or False?\n\
         answer: True\n\n\
         The city is twinned with Glasgow, Dortmund, Pleven, and Le Mans.\n\
         question: Dortmund is twinned with Glasgow. True or False?\nanswer:"
    );
}

#[test]
fn tabular_template() {
    let t = PromptTemplate::tabular(3);
    let ls = t.label_space().unwrap();
    assert_eq!(ls.verbalizers().collect::<Vec<_>>(), ["0", "1", "2"]);
    let demo = Demonstration::new(tabular_input(&[5.1, 3.5]), 2);
    let text = assemble_prompt(&tabular_input(&[6.0, 2.2]), &[demo], &t, &ls)
        .unwrap()
        .rendered_text;
    assert_eq!(
        text,
        "When we have x1=5.1, x2=3.5, what should be y? ### y=2 @@@\n\
         When we have x1=6, x2=2.2, what should be y? ### y="
    );
}

#[test]
fn every_builtin_is_valid() {
    let names: Vec<&str> = PromptTemplate::builtin_names().collect();
    assert!(names.len() >= 14);
    for name in names {
        let t = PromptTemplate::builtin(name).unwrap();
        t.validate().unwrap();
        assert!(t.label_space().unwrap().len() >= 2, "{name}");
    }
}
