#pragma once

#include <stdexcept>
#include <string>

namespace cpc {

/// Base class of every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CPC_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                    \
   public:                                                       \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

CPC_DEFINE_ERROR(SingularMatrix);
CPC_DEFINE_ERROR(RankDeficient);
CPC_DEFINE_ERROR(DegeneratePolynomial);
CPC_DEFINE_ERROR(NonFiniteState);
CPC_DEFINE_ERROR(VelocityBarDegenerate);
CPC_DEFINE_ERROR(NotFullyActuated);
CPC_DEFINE_ERROR(EmptyDataset);
CPC_DEFINE_ERROR(NoValidCandidates);
CPC_DEFINE_ERROR(PhasingDegenerate);
CPC_DEFINE_ERROR(SingularDecoupling);
CPC_DEFINE_ERROR(IoError);
CPC_DEFINE_ERROR(DatasetSchemaMismatch);
CPC_DEFINE_ERROR(InvalidArgument);

#undef CPC_DEFINE_ERROR

}  // namespace cpc
