#include "subquad/sketch.hpp"

#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <boost/random/normal_distribution.hpp>

using namespace subquad;

namespace {

Matrix randn(Index r, Index c, Engine& eng) {
    boost::random::normal_distribution<double> normal;
    Matrix M(r, c);
    for (Index k = 0; k < M.size(); ++k) M.data()[k] = normal(eng);
    return M;
}

// Sylvester construction, unnormalized.
Matrix sylvester(Index n) {
    Matrix H = Matrix::Ones(1, 1);
    while (H.rows() < n) {
        const Index k = H.rows();
        Matrix next(2 * k, 2 * k);
        next << H, H, H, -H;
        H = next;
    }
    return H;
}

Vector kron(const Vector& x, const Vector& y) {
    Vector out(x.size() * y.size());
    for (Index i = 0; i < x.size(); ++i) out.segment(i * y.size(), y.size()) = x[i] * y;
    return out;
}

// S_{r,(i,j)} = sigma1(i) sigma2(j) [h1(i) + h2(j) = r mod s], from the tabulated hashes.
Matrix tensor_sketch_oracle(const TensorSketchTransform& T) {
    const Index m1 = T.first.m, m2 = T.second.m, s = T.first.s;
    Matrix S = Matrix::Zero(s, m1 * m2);
    for (Index i = 0; i < m1; ++i)
        for (Index j = 0; j < m2; ++j) {
            const Index r = (T.first.bucket[i] + T.second.bucket[j]) % s;
            S(r, i * m2 + j) = T.first.sign[i] * T.second.sign[j];
        }
    return S;
}

// (1/sqrt(s)) P (H D1 x H D2) restricted to the unpadded coordinates.
Matrix tensor_srht_oracle(const TensorSrhtTransform& T) {
    const Matrix H1 = sylvester(T.m1_pad) * T.d1.asDiagonal();
    const Matrix H2 = sylvester(T.m2_pad) * T.d2.asDiagonal();
    Matrix S(T.target_dim(), T.m1 * T.m2);
    for (Index r = 0; r < T.target_dim(); ++r) {
        const auto [pi, pj] = T.pairs[static_cast<std::size_t>(r)];
        for (Index i = 0; i < T.m1; ++i)
            for (Index j = 0; j < T.m2; ++j) S(r, i * T.m2 + j) = H1(pi, i) * H2(pj, j);
    }
    return S / std::sqrt(static_cast<double>(T.target_dim()));
}

}  // namespace

TEST(Fwht, MatchesSylvesterProduct) {
    Engine eng = make_engine(1);
    for (Index n : {1, 2, 4, 8, 64, 256}) {
        const Vector x = randn(n, 1, eng);
        EXPECT_LT((fwht(x) - sylvester(n) * x).cwiseAbs().maxCoeff(), 1e-11) << n;
    }
}

TEST(Fwht, TwiceIsScaledIdentityAndRejectsBadLength) {
    Engine eng = make_engine(2);
    const Vector x = randn(32, 1, eng);
    EXPECT_LT((fwht(fwht(x)) - 32.0 * x).norm(), 1e-12);
    EXPECT_THROW(fwht(Vector(Vector::Ones(6))), Error);
    const Matrix H = sylvester(16);
    for (Index r = 0; r < 16; ++r)
        for (Index c = 0; c < 16; ++c)
            EXPECT_EQ(hadamard_entry(static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(c)), H(r, c));
}

TEST(Hash, Mod61MatchesWideRemainder) {
    Engine eng = make_engine(3);
    for (int k = 0; k < 1000; ++k) {
        const unsigned __int128 x = (static_cast<unsigned __int128>(eng()) << 58) ^ eng();
        EXPECT_EQ(detail::mod61(x), static_cast<std::uint64_t>(x % detail::mersenne61));
    }
}

TEST(Hash, PolynomialEvaluatesHorner) {
    Engine eng = make_engine(4);
    const auto h = detail::PolyHash<3>::draw(eng);
    const std::uint64_t x = 12345;
    const unsigned __int128 p = detail::mersenne61;
    unsigned __int128 want = (h.coef[0] + h.coef[1] * (x % p) % p + h.coef[2] * (x * x % p) % p) % p;
    EXPECT_EQ(h(x), static_cast<std::uint64_t>(want));
}

TEST(CountSketch, BucketsSpreadAndSignsBalance) {
    const auto cs = CountSketchParams::make(20'000, 16, 5);
    std::vector<int> counts(16, 0);
    double sgn = 0.0;
    for (Index i = 0; i < cs.m; ++i) {
        ++counts[static_cast<std::size_t>(cs.bucket[i])];
        sgn += cs.sign[i];
    }
    for (int c : counts) EXPECT_NEAR(c, 1250, 6 * std::sqrt(1250.0));
    EXPECT_LT(std::abs(sgn), 6 * std::sqrt(20'000.0));
}

TEST(TensorSketch, SingleCoordinateLandsInOneBucket) {
    const auto T = make_tensor_sketch(2, 4, 7);
    Vector e1 = Vector::Zero(2);
    e1[0] = 1.0;
    const Vector out = ts_apply(T, e1, e1);
    const Index r = (T.first.bucket[0] + T.second.bucket[0]) % 4;
    for (Index k = 0; k < 4; ++k) EXPECT_NEAR(std::abs(out[k]), k == r ? 1.0 : 0.0, 1e-14);
    EXPECT_NEAR(out.norm(), 1.0, 1e-14);
}

TEST(TensorSketch, FftPathMatchesDefinition) {
    for (int q = 0; q < 50; ++q) {
        Engine eng = make_engine(derive_seed(6, static_cast<std::uint64_t>(q)));
        const Index m1 = 1 + static_cast<Index>(uniform_index(eng, 16));
        const Index m2 = 1 + static_cast<Index>(uniform_index(eng, 16));
        const Index s = 1 + static_cast<Index>(uniform_index(eng, 32));
        const auto T = make_tensor_sketch(m1, m2, s, eng());
        const Matrix S = tensor_sketch_oracle(T);
        EXPECT_EQ(ts_materialize(T), S);
        const Vector x = randn(m1, 1, eng), y = randn(m2, 1, eng);
        EXPECT_LT((ts_apply(T, x, y) - S * kron(x, y)).cwiseAbs().maxCoeff(), 1e-12);
        const Vector ys = randn(m2, 1, eng).cwiseMax(0.0);
        EXPECT_LT((ts_apply(T, SparseVector::from_dense(x), SparseVector::from_dense(ys)) - ts_apply(T, x, ys))
                      .cwiseAbs()
                      .maxCoeff(),
                  1e-12);
    }
}

TEST(TensorSrht, FastPathMatchesDefinition) {
    for (int q = 0; q < 50; ++q) {
        Engine eng = make_engine(derive_seed(7, static_cast<std::uint64_t>(q)));
        const Index m1 = 1 + static_cast<Index>(uniform_index(eng, 16));
        const Index m2 = 1 + static_cast<Index>(uniform_index(eng, 16));
        const Index s = 1 + static_cast<Index>(uniform_index(eng, 32));
        const auto T = make_tensor_srht(m1, m2, s, eng());
        const Matrix S = tensor_srht_oracle(T);
        EXPECT_LT((srht_materialize(T) - S).cwiseAbs().maxCoeff(), 1e-15);
        const Vector x = randn(m1, 1, eng), y = randn(m2, 1, eng);
        EXPECT_LT((srht_apply(T, x, y) - S * kron(x, y)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(TensorTransforms, Linearity) {
    Engine eng = make_engine(8);
    for (SketchVariant v : {SketchVariant::tensor_srht, SketchVariant::tensor_sketch}) {
        const TensorTransform T = make_tensor_transform(v, 12, 9, 20, 99);
        const Vector x = randn(12, 1, eng), x2 = randn(12, 1, eng), y = randn(9, 1, eng);
        const Vector lhs = sketch_apply(T, 2.5 * x - 0.5 * x2, y);
        const Vector rhs = 2.5 * sketch_apply(T, x, y) - 0.5 * sketch_apply(T, x2, y);
        EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(target_dim(T), 20);
    }
}

TEST(TensorTransforms, UnbiasedSquaredNorm) {
    Engine eng = make_engine(9);
    const Vector x = randn(16, 1, eng), y = randn(16, 1, eng);
    const double want = x.squaredNorm() * y.squaredNorm();
    for (SketchVariant v : {SketchVariant::tensor_srht, SketchVariant::tensor_sketch}) {
        double acc = 0.0;
        for (int k = 0; k < 1000; ++k)
            acc += sketch_apply(make_tensor_transform(v, 16, 16, 64, derive_seed(10, static_cast<std::uint64_t>(k))), x, y).squaredNorm();
        EXPECT_NEAR(acc / 1000.0, want, 0.05 * want);
    }
}

TEST(TensorTransforms, ReproducibleFromSeed) {
    const auto a = make_tensor_srht(10, 32, 4);
    const auto b = make_tensor_srht(10, 32, 4);
    EXPECT_EQ(a.pairs, b.pairs);
    EXPECT_EQ(a.d1, b.d1);
    const auto c = make_tensor_sketch(10, 32, 4);
    const auto d = make_tensor_sketch(10, 32, 4);
    EXPECT_EQ(c.first.bucket, d.first.bucket);
    EXPECT_EQ(c.second.sign, d.second.sign);
}

TEST(SketchJacobian, RowsAreIndividualApplies) {
    Engine eng = make_engine(11);
    Matrix U = randn(8, 3, eng), V = randn(8, 3, eng);
    U.col(2) = U.col(0);
    V.col(2) = V.col(0);
    const TensorTransform T = make_tensor_transform(SketchVariant::tensor_srht, 8, 8, 24, 5);
    const Matrix J = sketch_jacobian(U, V, T);
    EXPECT_EQ(J.rows(), 3);
    EXPECT_EQ(J.row(0), J.row(2));
    EXPECT_EQ(Vector(J.row(1).transpose()), sketch_apply(T, U.col(1), V.col(1)));
}

TEST(SketchJacobian, MaterializedRowsAreKroneckerProducts) {
    Engine eng = make_engine(12);
    const Matrix U = randn(4, 2, eng), V = randn(3, 2, eng);
    const Matrix J = materialize_jacobian(U, V);
    for (Index i = 0; i < 2; ++i) EXPECT_LT((Vector(J.row(i).transpose()) - kron(U.col(i), V.col(i))).norm(), 1e-15);
    const Matrix G = J * J.transpose();
    EXPECT_NEAR(G(0, 1), U.col(0).dot(U.col(1)) * V.col(0).dot(V.col(1)), 1e-13);
}

TEST(SketchJacobian, RowSpaceDistortionSmallAtGenerousSketch) {
    Engine eng = make_engine(13);
    const Matrix U = randn(16, 4, eng), V = randn(16, 4, eng);
    const Matrix J = materialize_jacobian(U, V);
    const Matrix Q = Eigen::HouseholderQR<Matrix>(J.transpose()).householderQ() * Matrix::Identity(256, 4);
    int ok = 0;
    for (int q = 0; q < 20; ++q) {
        const TensorTransform T = make_tensor_transform(SketchVariant::tensor_srht, 16, 16, 512, derive_seed(14, static_cast<std::uint64_t>(q)));
        const Matrix SQ = sketch_materialize(T) * Q;
        const Vector sv = Eigen::JacobiSVD<Matrix>(SQ).singularValues();
        ok += sv.maxCoeff() <= 1.25 && sv.minCoeff() >= 0.75;
    }
    EXPECT_GE(ok, 19);
}

TEST(SubspaceEmbed, ExactWhenTargetCoversPaddedDimension) {
    Engine eng = make_engine(15);
    const auto E = make_subspace_embed(40, 64, 3);
    EXPECT_TRUE(E.exact());
    const Matrix M = randn(40, 5, eng);
    const Matrix SM = embed_apply(E, M);
    EXPECT_LT((SM.transpose() * SM - M.transpose() * M).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SubspaceEmbed, UnitVectorNormPreserved) {
    Matrix e1 = Matrix::Zero(64, 1);
    e1(0, 0) = 1.0;
    int ok = 0;
    for (int q = 0; q < 100; ++q) {
        const double nrm = embed_apply(make_subspace_embed(64, 16, static_cast<std::uint64_t>(q)), e1).norm();
        ok += std::abs(nrm - 1.0) <= 0.25;
    }
    EXPECT_GE(ok, 95);
}

TEST(SubspaceEmbed, SingularValuesOfEmbeddedBasis) {
    Engine eng = make_engine(16);
    const Matrix M = randn(64, 4, eng);
    const Matrix Q = Eigen::HouseholderQR<Matrix>(M).householderQ() * Matrix::Identity(64, 4);
    int ok = 0;
    for (int q = 0; q < 100; ++q) {
        const Vector sv = Eigen::JacobiSVD<Matrix>(embed_apply(make_subspace_embed(64, 48, static_cast<std::uint64_t>(q)), Q)).singularValues();
        ok += sv.maxCoeff() <= 1.25 && sv.minCoeff() >= 0.75;
    }
    EXPECT_GE(ok, 95);
}

TEST(SubspaceEmbed, ZeroAndErrors) {
    const auto E = make_subspace_embed(10, 4, 1);
    EXPECT_EQ(embed_apply(E, Matrix::Zero(10, 2)), Matrix::Zero(4, 2));
    EXPECT_THROW(embed_apply(E, Matrix::Zero(10, 5)), Error);
    EXPECT_THROW(embed_apply(E, Matrix::Zero(9, 2)), Error);
    const auto F = make_subspace_embed(10, 4, 1);
    EXPECT_EQ(E.rows, F.rows);
    EXPECT_EQ(E.signs, F.signs);
}
