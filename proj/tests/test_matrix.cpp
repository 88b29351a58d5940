#include "aegru/matrix.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace aegru;

TEST(Matrix, IdentityMatmulIsIdentity) {
    RngStream rng(7);
    Matrix a = testutil::random_matrix(3, 3, rng);
    Matrix out = matmul(Matrix::identity(3), a);
    EXPECT_EQ(out, a);
}

TEST(Matrix, MatmulHandCase) {
    Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
    Matrix b = Matrix::from_rows({{1}, {1}});
    Matrix c = matmul(a, b);
    EXPECT_DOUBLE_EQ(c(0, 0), 3.0);
    EXPECT_DOUBLE_EQ(c(1, 0), 7.0);
}

TEST(Matrix, MatmulShapeMismatchNamesBothShapes) {
    Matrix a(2, 3), b(4, 2);
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("4x2"), std::string::npos) << msg;
    }
}

TEST(Matrix, MatmulAssociativeAddCommutative) {
    RngStream rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix a = testutil::random_matrix(3, 4, rng);
        Matrix b = testutil::random_matrix(4, 2, rng);
        Matrix c = testutil::random_matrix(2, 5, rng);
        Matrix left = matmul(matmul(a, b), c);
        Matrix right = matmul(a, matmul(b, c));
        EXPECT_LT(max_abs(sub(left, right)), 1e-12);

        Matrix d = testutil::random_matrix(3, 4, rng);
        EXPECT_LT(max_abs(sub(add(a, d), add(d, a))), 1e-12);
    }
}

TEST(Matrix, ElementwiseClosedForms) {
    Matrix z(1, 1);
    EXPECT_DOUBLE_EQ(sigmoid(z)(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(tanh(z)(0, 0), 0.0);
    EXPECT_NEAR(softplus(z)(0, 0), 0.6931471805599453, 1e-15);

    Matrix a = Matrix::from_rows({{1, 2}});
    Matrix b = Matrix::from_rows({{3, 4}});
    Matrix h = hadamard(a, b);
    EXPECT_DOUBLE_EQ(h(0, 0), 3.0);
    EXPECT_DOUBLE_EQ(h(0, 1), 8.0);
}

TEST(Matrix, SoftplusOverflowSafe) {
    Matrix big = Matrix::from_rows({{1000.0}});
    EXPECT_DOUBLE_EQ(softplus(big)(0, 0), 1000.0);
    Matrix x = Matrix::from_rows({{31.0}});
    EXPECT_DOUBLE_EQ(softplus(x)(0, 0), 31.0);
}

TEST(Matrix, LogRejectsNonPositiveWithIndex) {
    Matrix a = Matrix::from_rows({{1.0, -2.0}});
    try {
        log(a);
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("index 1"), std::string::npos) << msg;
    }
}

TEST(Matrix, BroadcastAndReductions) {
    Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
    Matrix bias = Matrix::from_rows({{10, 20}});
    Matrix out = add_row_broadcast(a, bias);
    EXPECT_DOUBLE_EQ(out(1, 1), 24.0);

    Matrix cs = col_sums(a);
    EXPECT_DOUBLE_EQ(cs(0, 0), 4.0);
    EXPECT_DOUBLE_EQ(cs(0, 1), 6.0);
    EXPECT_DOUBLE_EQ(sum(a), 10.0);
}

TEST(Matrix, SliceRows) {
    Matrix a = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
    Matrix s = slice_rows(a, 1, 3);
    EXPECT_EQ(s.rows(), 2u);
    EXPECT_DOUBLE_EQ(s(0, 0), 3.0);
    EXPECT_DOUBLE_EQ(s(1, 1), 6.0);
    EXPECT_THROW(slice_rows(a, 2, 4), DimensionError);
}

TEST(Matrix, OperationsPreserveFiniteness) {
    RngStream rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix a = testutil::random_matrix(4, 4, rng, -50.0, 50.0);
        Matrix b = testutil::random_matrix(4, 4, rng, -50.0, 50.0);
        EXPECT_TRUE(all_finite(matmul(a, b)));
        EXPECT_TRUE(all_finite(sigmoid(a)));
        EXPECT_TRUE(all_finite(tanh(a)));
        EXPECT_TRUE(all_finite(softplus(a)));
        EXPECT_TRUE(all_finite(hadamard(a, b)));
    }
}

TEST(Matrix, TransposeRoundTrip) {
    RngStream rng(5);
    Matrix a = testutil::random_matrix(3, 7, rng);
    EXPECT_EQ(transpose(transpose(a)), a);
}
