from newscap.text import locate_span, normalize_span, split_sentences, tokenize, truncate_words, word_count


def test_truncate_words():
    assert truncate_words("a b c d", 2) == "a b"
    assert truncate_words(" a  b ", 5) == "a  b"
    assert word_count(truncate_words(" ".join(["w"] * 40), 30)) == 30


def test_tokenize():
    assert tokenize("Obama's speech, in D.C.") == ["obama", "'", "s", "speech", ",", "in", "d", ".", "c", "."]


def test_normalize_span():
    assert normalize_span('  "The  Mayor spoke."  ') == "the mayor spoke"


def test_split_sentences_abbreviations():
    text = "Mr. Smith went to Washington. He met Dr. Jones at 3 p.m. today! Was it fun? Yes."
    assert split_sentences(text) == [
        "Mr. Smith went to Washington.",
        "He met Dr. Jones at 3 p.m. today!",
        "Was it fun?",
        "Yes.",
    ]


def test_split_sentences_initials_and_tail():
    assert split_sentences("J. K. Rowling wrote it. no end") == ["J. K. Rowling wrote it. no end"]
    assert split_sentences("One. Two") == ["One.", "Two"]
    assert split_sentences("   ") == []


def test_locate_span_returns_exact_article_slice():
    article = "Ein  Straße war nass. Then RAIN came."
    assert locate_span(article, "STRASSE war nass") == (5, "Straße war nass.")
    assert locate_span(article, "then rain came") == (22, "Then RAIN came.")
    assert locate_span(article, "snow came") is None
    assert locate_span(article, "  ...  ") is None
