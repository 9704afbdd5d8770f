from typing import Literal
import workspace.MATH.workflows.template.operator as operator
import workspace.MATH.workflows.round_16.prompt as prompt_custom
from scripts.async_llm import create_llm_instance
import weave


DatasetType = Literal["HumanEval", "MBPP", "GSM8K", "MATH", "HotpotQA", "DROP"]

class Workflow:
    def __init__(
        self,
        name: str,
        llm_config,
        dataset: DatasetType,
    ) -> None:
        self.name = name
        self.dataset = dataset
        self.llm = create_llm_instance(llm_config)
        self.custom1 = operator.Custom(self.llm)
        self.custom2 = operator.Custom(self.llm)
        self.custom3 = operator.Custom(self.llm)
        self.custom4 = operator.Custom(self.llm)
        self.custom5 = operator.Custom(self.llm)
        self.programmer = operator.Programmer(self.llm)
        self.refine = operator.Custom(self.llm)
        self.ensemble = operator.ScEnsemble(self.llm)

    @weave.op()
    async def __call__(self, problem: str):
        """Implementation of the workflow"""
        # Use the first custom operator to solve the problem step by step
        custom_response_1 = await self.custom1(input=problem, instruction=prompt_custom.SIMPLE_SOLVER, role="simple_solver_1")
        
        # Use the second custom operator to solve the problem step by step
        custom_response_2 = await self.custom2(input=problem, instruction=prompt_custom.SIMPLE_SOLVER, role="simple_solver_2")
        
        # Use the third custom operator to provide an alternative approach to the problem
        custom_response_3 = await self.custom3(input=problem, instruction=prompt_custom.ALTERNATIVE_SOLVER, role="alternative_solver")
        
        # Use the fourth custom operator to provide a detailed solution outline
        custom_response_4 = await self.custom4(input=problem, instruction=prompt_custom.DETAILED_SOLUTION_OUTLINE, role="detailed_solution_outline")
        
        # Use the fifth custom operator to provide a comprehensive solution
        custom_response_5 = await self.custom5(input=problem, instruction=prompt_custom.COMPREHENSIVE_SOLUTION, role="comprehensive_solution")
        
        # Use the programmer operator to analyze the problem and provide a detailed solution
        programmer_response = await self.programmer(problem=problem, analysis="Solve the math problem step by step")
        
        # Combine all responses into a list for ensemble processing
        solutions = [
            custom_response_1['response'], 
            custom_response_2['response'], 
            custom_response_3['response'], 
            custom_response_4['response'],
            custom_response_5['response'],
            programmer_response['output']
        ]
        
        # Use the ensemble operator to select the best solution
        ensemble_response = await self.ensemble(solutions=solutions, problem=problem)
        
        # Use the refine operator to ensure clarity and correctness of the output
        refined_response = await self.refine(input=ensemble_response['response'], instruction=prompt_custom.REFINE_SOLUTION, role="refine_solution")
        
        # Return the final output and cost
        return refined_response['response'], self.llm.get_usage_summary()["total_cost"]

