#include "doctest.h"

#include <numeric>

#include "medsae/labels.hpp"
#include "medsae/rng.hpp"
#include "test_util.hpp"

using namespace medsae;

TEST_CASE("label CSV header gives k, body gives n") {
    testutil::TempDir dir("labels");
    testutil::write_text(dir / "l.csv", "edema,effusion\n1,0\n0,1\n");
    LabelMatrix lm = read_labels(dir / "l.csv");
    CHECK(lm.rows == 2);
    CHECK(lm.cols == 2);
    CHECK(lm.label_names == std::vector<std::string>{"edema", "effusion"});
    CHECK(lm(0, 0) == 1.0);
    CHECK(lm(0, 1) == 0.0);
    CHECK(lm(1, 0) == 0.0);
    CHECK(lm(1, 1) == 1.0);
}

TEST_CASE("non-binary entries are rejected") {
    testutil::TempDir dir("labels");
    testutil::write_text(dir / "l.csv", "a,b\n1,2\n");
    CHECK_THROWS_AS(read_labels(dir / "l.csv"), NonBinaryEntry);
    testutil::write_text(dir / "neg.csv", "a,b\n1,-1\n");
    CHECK_THROWS_AS(read_labels(dir / "neg.csv"), NonBinaryEntry);
}

TEST_CASE("ragged rows and bad headers are rejected") {
    testutil::TempDir dir("labels");
    testutil::write_text(dir / "ragged.csv", "a,b\n1,0,1\n");
    CHECK_THROWS_AS(read_labels(dir / "ragged.csv"), RaggedRow);
    testutil::write_text(dir / "empty.csv", "");
    CHECK_THROWS_AS(read_labels(dir / "empty.csv"), EmptyHeader);
    testutil::write_text(dir / "blank_name.csv", "a,,c\n1,0,1\n");
    CHECK_THROWS_AS(read_labels(dir / "blank_name.csv"), EmptyHeader);
    testutil::write_text(dir / "dup.csv", "a,a\n1,0\n");
    CHECK_THROWS_AS(read_labels(dir / "dup.csv"), DuplicateLabel);
}

TEST_CASE("balanced 14-class one-hot file loads with per-class sum 200") {
    // synthetic stand-in shaped like a curated 14 x 200 evaluation set
    testutil::TempDir dir("labels");
    const std::size_t k = 14, per_class = 200;
    LabelMatrix lm;
    lm.rows = k * per_class;
    lm.cols = k;
    lm.data.assign(lm.rows * k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
        lm.label_names.push_back("class_" + std::to_string(j));
    }
    auto order = shuffled_indices(lm.rows, 33);
    for (std::size_t i = 0; i < lm.rows; ++i) {
        lm(order[i], i / per_class) = 1.0;
    }
    write_labels(lm, dir / "balanced.csv");

    LabelMatrix back = read_labels(dir / "balanced.csv");
    CHECK(back.rows == 2800);
    CHECK(back.cols == 14);
    for (std::size_t j = 0; j < k; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < back.rows; ++i) sum += back(i, j);
        CHECK(sum == 200.0);
    }
    CHECK(back.data == lm.data);
}

TEST_CASE("trailing CRLF and final newline are tolerated") {
    testutil::TempDir dir("labels");
    testutil::write_text(dir / "crlf.csv", "a,b\r\n1,0\r\n0,1\r\n");
    LabelMatrix lm = read_labels(dir / "crlf.csv");
    CHECK(lm.rows == 2);
    CHECK(lm.label_names[1] == "b");
}
