"""Hand-computed backoff queries against tests/data/toy3.arpa.

Each expected value is written as the sum the recursion visits, read off
the file by hand: hits are the stored log10 probability, misses add the
context's backoff weight and shorten the context.
"""

# (context, word, expected log10 probability)
HAND_QUERIES = [
    ((), "the", -0.8),                              # unigram hit
    ((), "cat", -1.5),                              # unigram hit
    (("the",), "cat", -0.9),                        # bigram hit
    (("the",), "sat", -0.3 + -1.9),                 # bo(the) + p(sat)
    (("<s>", "the"), "cat", -0.2),                  # trigram hit
    (("the", "cat"), "sat", -0.5),                  # trigram hit
    (("the", "cat"), "on", -0.35 + -0.4 + -2.1),    # bo(the cat) + bo(cat) + p(on)
    (("sat", "on"), "the", -0.35),                  # trigram hit
    (("cat", "sat"), "on", -0.05 + -0.6),           # bo(cat sat) + p(on | sat)
    (("dog", "sat"), "on", 0.0 + -0.6),             # absent context: no penalty
    (("the", "dog"), "sat", -0.15 + -0.2 + -1.9),   # two backoff steps
    (("on", "the"), "cat", -0.2 + -0.9),            # bo(on the) + p(cat | the)
    (("on", "the"), "dog", -0.2 + -1.1),            # bo(on the) + p(dog | the)
    ((), "zebra", -2.0),                            # OOV maps to <unk>
    (("the",), "zebra", -0.3 + -2.0),               # bo(the) + p(<unk>)
    (("<s>",), "the", -0.4),                        # bigram hit
    (("<s>",), "cat", -0.5 + -1.5),                 # bo(<s>) + p(cat)
    (("sat",), "the", -0.6 + -0.8),                 # bo(sat) + p(the)
    (("sat", "on"), "cat", -0.45 + -0.1 + -1.5),    # two backoff steps
    (("cat",), "</s>", -0.4 + -1.2),                # bo(cat) + p(</s>)
    (("x", "the", "cat"), "sat", -0.5),             # context truncated to order - 1
    (("zebra", "the"), "cat", 0.0 + -0.9),          # <unk> the: absent context
]

# score_sequence: (tokens, boundary, total, scored token count)
HAND_SEQUENCES = [
    (("the", "cat", "sat"), False, -0.8 + -0.9 + -0.5, 3),
    # <s> the cat sat </s>: p(</s> | cat sat) = bo(cat sat) + bo(sat) + p(</s>)
    (("the", "cat", "sat"), True, -0.4 + -0.2 + -0.5 + (-0.05 + -0.6 + -1.2), 4),
    (("cat",), False, -1.5, 1),
]
