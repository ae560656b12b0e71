//! Small built-in corpora used by tests, examples, and the CLI smoke runs.

use crate::corpus::{AnnotatedSentence, Dataset, EntityTypeSet};

fn sent(id: &str, text: &str, spans: &[(usize, usize, &str)]) -> AnnotatedSentence {
    let tokens: Vec<&str> = text.split(' ').collect();
    AnnotatedSentence::from_parts(id, &tokens, spans).expect("fixture sentence is valid")
}

/// Three-sentence training split: a disease mention, two adjacent person
/// mentions, and a sentence without entities.
pub fn fixture_t1() -> Dataset {
    let types = EntityTypeSet::from_labels(&["Disease", "PER"]).expect("labels");
    let train = vec![
        sent("s1", "The risk of cancer increased .", &[(3, 3, "Disease")]),
        sent(
            "s2",
            "Lionel Messi and Cristiano Ronaldo are exceptional football players",
            &[(0, 1, "PER"), (3, 4, "PER")],
        ),
        sent("s3", "The weather is nice .", &[]),
    ];
    Dataset::new("t1", types, train, vec![], vec![]).expect("fixture dataset is valid")
}

/// The four-type newswire schema with glosses.
pub fn newswire_types() -> EntityTypeSet {
    EntityTypeSet::with_glosses(&[
        ("PER", "Person"),
        ("LOC", "Location"),
        ("ORG", "Organization"),
        ("MISC", "Miscellaneous"),
    ])
    .expect("labels")
}

const CITY_NAMES: [&str; 43] = [
    "Haikou", "Sanya", "Danzhou", "Qionghai", "Wanning", "Dongfang", "Wuzhishan", "Lingao",
    "Chengmai", "Dingan", "Tunchang", "Baoting", "Ledong", "Changjiang", "Baisha", "Lingshui",
    "Qiongzhong", "Nanning", "Guilin", "Liuzhou", "Wuzhou", "Beihai", "Qinzhou", "Yulin",
    "Baise", "Hechi", "Laibin", "Chongzuo", "Hezhou", "Guigang", "Fangchenggang", "Zhanjiang",
    "Maoming", "Shantou", "Zhuhai", "Foshan", "Jiangmen", "Huizhou", "Dongguan", "Zhongshan",
    "Shaoguan", "Meizhou", "Qingyuan",
];

/// Desk-scale newswire corpus whose label statistics (context window 2)
/// match the reflection examples used by the golden prompt tests:
///
/// * `Italian` occurs 35 times, always as an entity token;
/// * `city` occurs 44 times as a context token and 20 times as an other token;
/// * `pulled` occurs only as right context of a person mention.
///
/// The test split holds the three reflection query sentences.
pub fn newswire() -> Dataset {
    let mut train = Vec::new();
    let mut next = |text: &str, spans: &[(usize, usize, &str)]| {
        let id = format!("nw-train-{:03}", train.len());
        train.push(sent(&id, text, spans));
    };

    next(
        "Middlesbrough 's Italian striker Fabrizio Ravanelli scored twice .",
        &[(2, 2, "MISC")],
    );
    next(
        "He grew up in the English city of his father .",
        &[(5, 5, "MISC")],
    );
    next("Officials said the city council would meet on Friday .", &[]);
    next(
        "10th-ranked American Chanda Rubin has pulled out of the tournament .",
        &[(2, 3, "PER")],
    );
    next("Xinhua reported the news on Monday .", &[(0, 0, "ORG")]);
    next("Heavy rain hit Wenchang on Monday .", &[(3, 3, "LOC")]);
    for k in 1..=34 {
        next(&format!("Report {k} : Italian officials said ."), &[(3, 3, "MISC")]);
    }
    for name in CITY_NAMES {
        next(
            &format!("Police in {name} city arrested two men ."),
            &[(2, 2, "LOC")],
        );
    }
    for year in 2001..=2019 {
        next(&format!("In {year} city budgets rose sharply ."), &[]);
    }
    next("off fine saves whenever they did .", &[]);
    next(
        "Serie A games to be played on Sunday ( league positions in parentheses , all kick- off times GMT ) :",
        &[],
    );
    next(
        "Officials did not say when Qinglan port would be opened to foreign vessels .",
        &[],
    );

    let test = vec![
        sent(
            "nw-test-000",
            "Bitar pulled off fine saves whenever they did .",
            &[(0, 0, "PER")],
        ),
        sent(
            "nw-test-001",
            "Italian Serie A games to be played on Sunday ( league positions in parentheses , all kick- off times GMT ) :",
            &[(0, 0, "MISC"), (1, 2, "MISC")],
        ),
        sent(
            "nw-test-002",
            "Xinhua did not say when Qinglan port in Wenchang city would be opened to foreign vessels .",
            &[(0, 0, "ORG"), (5, 5, "LOC"), (8, 8, "LOC")],
        ),
    ];
    Dataset::new("newswire", newswire_types(), train, vec![], test).expect("fixture dataset is valid")
}
